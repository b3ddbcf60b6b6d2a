"""
Módulo de estatística da sensibilidade por camada.
Teste de permutação (variância das médias por camada), tamanho de efeito,
correlações de Pearson e Spearman, z-score e YapScore.
"""

from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import betainc
from scipy.stats import rankdata

from src import rng
from src.config import N_PERM_PADRAO
from src.errors import ErroDimensao
from src.rep_metrics import METRICAS
from src.trace import TabelaScores


ESQUEMAS_PERMUTACAO = ("por_amostra", "global")
P_MINIMO = float(np.finfo(np.float64).tiny)
TOLERANCIA_EMPATE = 1e-12


@dataclass(frozen=True)
class ResultadoPermutacao:
    estatistica_observada: float
    p_valor: float
    tamanho_efeito: float
    n_perm: int
    seed: int
    esquema: str = "por_amostra"

    def para_dict(self):
        return {
            "observed": self.estatistica_observada,
            "p_value": self.p_valor,
            "effect_size": self.tamanho_efeito,
            "n_perm": self.n_perm,
            "seed": self.seed,
            "scheme": self.esquema
        }


@dataclass(frozen=True)
class ResultadoCorrelacao:
    coeficiente: float
    p_valor: float
    n: int

    def para_dict(self):
        return {"coefficient": self.coeficiente, "p_value": self.p_valor, "n": self.n}


def variancia_medias_camadas(valores):
    """
    Estatística do teste: variância (forma populacional) das médias por camada.

    Args:
        valores (np.ndarray): [..., samples, camadas]

    Returns:
        np.ndarray | float: Variância por tabela
    """
    return np.var(np.mean(valores, axis=-2), axis=-1)


def _permutar_lote(valores, seed, inicio, quantidade, esquema):
    S, L = valores.shape
    u = rng.uniformes(seed, quantidade * S * L, inicio=inicio * S * L)
    if esquema == "por_amostra":
        ordem = np.argsort(u.reshape(quantidade, S, L), axis=-1, kind="stable")
        return np.take_along_axis(np.broadcast_to(valores, (quantidade, S, L)), ordem, axis=-1)
    ordem = np.argsort(u.reshape(quantidade, S * L), axis=-1, kind="stable")
    return valores.reshape(-1)[ordem].reshape(quantidade, S, L)


def distribuicao_nula(tabela, n_perm=N_PERM_PADRAO, seed=0, esquema="por_amostra", tamanho_lote=512):
    """
    Estatísticas permutadas. A réplica b usa os contadores b·S·L .. (b+1)·S·L - 1,
    então o resultado não depende do tamanho do lote.

    Args:
        tabela (TabelaScores): Tabela samples × camadas
        n_perm (int): Número de permutações
        seed (int): Semente
        esquema (str): 'por_amostra' (rótulos embaralhados dentro de cada sample)
            ou 'global' (todas as células embaralhadas)
        tamanho_lote (int): Réplicas por lote vetorizado

    Returns:
        np.ndarray: n_perm estatísticas
    """
    if esquema not in ESQUEMAS_PERMUTACAO:
        raise ErroDimensao(f"Esquema de permutação desconhecido: '{esquema}'", campo="scheme")

    nulos = np.empty(n_perm, dtype=np.float64)
    for inicio in range(0, n_perm, tamanho_lote):
        quantidade = min(tamanho_lote, n_perm - inicio)
        permutados = _permutar_lote(tabela.valores, seed, inicio, quantidade, esquema)
        nulos[inicio:inicio + quantidade] = variancia_medias_camadas(permutados)
    return nulos


def teste_permutacao(tabela, n_perm=N_PERM_PADRAO, seed=0, esquema="por_amostra"):
    """
    Teste de permutação de Monte Carlo para importância uniforme das camadas.
    p = (b + 1) / (n_perm + 1), com b = #{permutada >= observada}.

    Args:
        tabela (TabelaScores): Tabela samples × camadas
        n_perm (int): Número de permutações
        seed (int): Semente
        esquema (str): 'por_amostra' ou 'global'

    Returns:
        ResultadoPermutacao: Estatística, p-valor e tamanho de efeito

    Raises:
        ErroDimensao: Se a tabela tiver uma única camada
    """
    if tabela.num_camadas < 2:
        raise ErroDimensao("Teste de permutação exige ao menos 2 camadas", campo="table")
    if n_perm < 1:
        raise ErroDimensao("n_perm deve ser >= 1", campo="n_perm")

    observada = float(variancia_medias_camadas(tabela.valores))
    nulos = distribuicao_nula(tabela, n_perm, seed, esquema)

    b = int(np.sum(nulos >= observada - TOLERANCIA_EMPATE * abs(observada)))
    p_valor = (b + 1) / (n_perm + 1)

    desvio = float(np.std(nulos))
    efeito = (observada - float(np.mean(nulos))) / desvio if desvio > 0 else 0.0

    return ResultadoPermutacao(observada, p_valor, efeito, n_perm, seed, esquema)


def _validar_pares(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or x.shape != y.shape:
        raise ErroDimensao("x e y precisam ser vetores do mesmo tamanho", campo="x")
    if x.size < 3:
        raise ErroDimensao("Correlação exige n >= 3", campo="x")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ErroDimensao("Valores não finitos na correlação", campo="x")
    return x, y


def pearson(x, y):
    """
    Coeficiente de Pearson com p-valor bilateral pela cauda t de Student
    (função beta incompleta regularizada). Para |r| = 1 o p-valor é o menor
    float positivo normalizado.

    Args:
        x (array-like): Vetor
        y (array-like): Vetor do mesmo tamanho

    Returns:
        ResultadoCorrelacao: r, p-valor e n

    Raises:
        ErroDimensao: Se n < 3 ou alguma variância for zero
    """
    x, y = _validar_pares(x, y)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise ErroDimensao("Variância zero na correlação", campo="x")

    r = float(np.clip(np.dot(dx, dy) / np.sqrt(sxx * syy), -1.0, 1.0))
    n = x.size
    gl = n - 2

    if abs(r) == 1.0:
        return ResultadoCorrelacao(r, P_MINIMO, n)

    t2 = r * r * gl / (1.0 - r * r)
    p_valor = float(betainc(gl / 2.0, 0.5, gl / (gl + t2)))
    return ResultadoCorrelacao(r, min(max(p_valor, P_MINIMO), 1.0), n)


def postos_medios(valores):
    """Postos 1..n; empates recebem o posto médio."""
    return rankdata(np.asarray(valores, dtype=np.float64), method="average")


def spearman(x, y):
    """
    Correlação de Spearman: Pearson sobre os postos médios.
    """
    x, y = _validar_pares(x, y)
    return pearson(postos_medios(x), postos_medios(y))


def yapscore(comprimento, baseline):
    """
    YapScore = max(0, comprimento - baseline).

    Args:
        comprimento (int): Comprimento da saída em tokens
        baseline (int): Comprimento de referência

    Returns:
        int: Tokens além do baseline
    """
    return max(0, int(comprimento) - int(baseline))


def yapscore_tabela(comprimentos, baseline):
    """
    Aplica o YapScore célula a célula numa tabela de comprimentos.

    Args:
        comprimentos (TabelaScores): Comprimentos por sample e camada
        baseline (int): Comprimento de referência

    Returns:
        TabelaScores: YapScores
    """
    valores = np.maximum(0.0, comprimentos.valores - float(baseline))
    return TabelaScores(valores, comprimentos.rotulos_camadas)


def zscore(valores):
    """
    Padronização (v - média) / desvio (forma populacional).

    Args:
        valores (array-like): Ao menos 2 valores

    Returns:
        np.ndarray: Valores padronizados

    Raises:
        ErroDimensao: Se houver menos de 2 valores ou desvio zero
    """
    valores = np.asarray(valores, dtype=np.float64)
    if valores.size < 2:
        raise ErroDimensao("z-score exige ao menos 2 valores", campo="values")
    desvio = float(np.std(valores))
    if desvio == 0.0:
        raise ErroDimensao("z-score de vetor constante", campo="values")
    return (valores - valores.mean()) / desvio


def queda_desempenho(tabela, baseline):
    """
    Queda de desempenho por camada podada: baseline - valor.

    Args:
        tabela (TabelaScores): Desempenho com cada camada podada
        baseline (float | array-like): Desempenho sem poda (escalar ou um por sample)

    Returns:
        TabelaScores: Quedas
    """
    base = np.asarray(baseline, dtype=np.float64)
    if base.ndim == 1:
        if base.size != tabela.num_samples:
            raise ErroDimensao("Baseline com tamanho diferente do número de samples", campo="baseline")
        base = base[:, np.newaxis]
    return TabelaScores(base - tabela.valores, tabela.rotulos_camadas)


def correlacao_por_camada(tabela_x, tabela_y, metodo="pearson"):
    """
    Correlaciona as médias por camada de duas tabelas (ex.: ROUGE-1 e YapScore).

    Args:
        tabela_x (TabelaScores): Primeira tabela
        tabela_y (TabelaScores): Segunda tabela (mesmo número de camadas)
        metodo (str): 'pearson' ou 'spearman'

    Returns:
        ResultadoCorrelacao: Correlação entre as curvas por camada
    """
    if tabela_x.num_camadas != tabela_y.num_camadas:
        raise ErroDimensao("Tabelas com números de camadas diferentes", campo="table")
    funcao = {"pearson": pearson, "spearman": spearman}.get(metodo)
    if funcao is None:
        raise ErroDimensao(f"Método de correlação desconhecido: '{metodo}'", campo="method")
    return funcao(tabela_x.valores.mean(axis=0), tabela_y.valores.mean(axis=0))


def correlacionar_metricas_com_queda(relatorio, quedas, metodo="spearman", nivel=0.05):
    """
    Correlação entre cada curva (métrica, estágio) do relatório e a queda de
    desempenho por camada.

    Args:
        relatorio (RelatorioMetricas): Métricas por camada e estágio
        quedas (array-like): Queda média por camada
        metodo (str): 'spearman' ou 'pearson'
        nivel (float): Nível de significância

    Returns:
        list: [{"metric", "stage", "coefficient", "p_value", "n", "significant"}]
    """
    quedas = np.asarray(quedas, dtype=np.float64)
    funcao = {"pearson": pearson, "spearman": spearman}.get(metodo)
    if funcao is None:
        raise ErroDimensao(f"Método de correlação desconhecido: '{metodo}'", campo="method")

    estagios = []
    for linha in relatorio.linhas:
        if linha["stage"] not in estagios:
            estagios.append(linha["stage"])

    linhas = []
    for metrica in METRICAS:
        for estagio in estagios:
            curva = [
                l["value"] for l in sorted(relatorio.linhas, key=lambda l: l["layer"])
                if l["metric"] == metrica and l["stage"] == estagio
            ]
            if not curva:
                continue
            if len(curva) != quedas.size:
                raise ErroDimensao("Quedas e relatório com números de camadas diferentes", campo="drops")
            try:
                resultado = asdict(funcao(curva, quedas))
            except ErroDimensao:
                resultado = {"coeficiente": None, "p_valor": None, "n": len(curva)}

            p = resultado["p_valor"]
            linhas.append({
                "metric": metrica,
                "stage": estagio,
                "coefficient": resultado["coeficiente"],
                "p_value": p,
                "n": resultado["n"],
                "significant": p is not None and p < nivel
            })
    return linhas

"""
Métricas de representação por camada e estágio.
Espectrais (entropia espectral, posto efetivo), geométrica (curvatura),
de robustez (DiME, LiDAR, InfoNCE) e intervalos por bootstrap percentil.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from src import rng
from src.config import (
    ALPHA_BOOTSTRAP_PADRAO, KNN_K_PADRAO, PROB_DROPOUT_PADRAO,
    REAMOSTRAGENS_BOOTSTRAP_PADRAO, TAU_PADRAO
)
from src.errors import ErroDimensao
from src.trace import perturbar_snapshot


CORTE_SINGULAR = 1e-12
MODOS_DENOMINADOR = ("standard", "literal")
METRICAS = ("spectral_entropy", "effective_rank", "curvature", "dime", "lidar", "infonce")


@dataclass(frozen=True)
class ConfigMetricas:
    knn_k: int = KNN_K_PADRAO
    tau: float = TAU_PADRAO
    prob_dropout: float = PROB_DROPOUT_PADRAO
    reamostragens_bootstrap: int = REAMOSTRAGENS_BOOTSTRAP_PADRAO
    alpha_bootstrap: float = ALPHA_BOOTSTRAP_PADRAO
    modo_denominador: str = "standard"

    def __post_init__(self):
        if self.knn_k < 1:
            raise ErroDimensao("knn_k deve ser >= 1", campo="knn_k")
        if not self.tau > 0:
            raise ErroDimensao("tau deve ser > 0", campo="tau")
        if not 0.0 <= self.prob_dropout < 1.0:
            raise ErroDimensao("prob_dropout deve estar em [0, 1)", campo="drop_prob")
        if self.reamostragens_bootstrap < 1:
            raise ErroDimensao("reamostragens_bootstrap deve ser >= 1", campo="bootstrap")
        if not 0.0 < self.alpha_bootstrap < 1.0:
            raise ErroDimensao("alpha_bootstrap deve estar em (0, 1)", campo="alpha")
        if self.modo_denominador not in MODOS_DENOMINADOR:
            raise ErroDimensao(
                f"modo_denominador desconhecido: '{self.modo_denominador}'", campo="denominator"
            )


@dataclass(frozen=True)
class RelatorioMetricas:
    """Linhas {layer, stage, metric, value, ci_low, ci_high}."""

    linhas: tuple

    def valor(self, camada, estagio, metrica):
        for linha in self.linhas:
            if (linha["layer"], linha["stage"], linha["metric"]) == (camada, estagio, metrica):
                return linha["value"]
        raise ErroDimensao(f"Sem valor para ({camada}, {estagio}, {metrica})", campo="metric")


# =============================================================================
# Métricas espectrais e geométricas
# =============================================================================

def _valores_singulares(Z):
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] < 2:
        raise ErroDimensao(f"Entropia espectral exige T >= 2 (forma {Z.shape})", campo="Z")

    centrada = Z - Z.mean(axis=0, keepdims=True)
    s = np.linalg.svd(centrada, compute_uv=False)
    # piso = resíduo de arredondamento da centragem (linhas idênticas viram ~eps·|Z|)
    piso = max(Z.shape) * np.finfo(np.float64).eps * float(np.linalg.norm(Z))
    corte = max(CORTE_SINGULAR * float(s.max(initial=0.0)), piso)
    s[s <= corte] = 0.0
    return s


def entropia_espectral(Z):
    """
    Entropia de Shannon dos valores singulares normalizados de Z centrada.

    Args:
        Z (np.ndarray): Matriz T×d (T >= 2)

    Returns:
        float: H = -sum p_i ln p_i (0 se todos os valores singulares forem 0)
    """
    s = _valores_singulares(Z)
    soma = s.sum()
    if soma == 0.0:
        return 0.0
    p = s[s > 0] / soma
    return float(-np.sum(p * np.log(p)))


def posto_efetivo(Z):
    """
    Posto efetivo: exp(entropia espectral).

    Args:
        Z (np.ndarray): Matriz T×d

    Returns:
        float: exp(H)
    """
    return float(np.exp(entropia_espectral(Z)))


def normalizar_linhas(Z):
    """Normaliza cada linha em l2; linhas nulas continuam nulas."""
    Z = np.asarray(Z, dtype=np.float64)
    normas = np.linalg.norm(Z, axis=-1, keepdims=True)
    return np.divide(Z, normas, out=np.zeros_like(Z), where=normas > 0)


def curvatura(Z, k=KNN_K_PADRAO):
    """
    Um menos a similaridade cosseno média entre cada token e seus k vizinhos
    mais próximos (excluindo ele mesmo; empates pelo menor índice).

    Args:
        Z (np.ndarray): Matriz T×d
        k (int): Número de vizinhos

    Returns:
        float: Curvatura em [0, 2]

    Raises:
        ErroDimensao: Se T <= k
    """
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] <= k:
        raise ErroDimensao(f"Curvatura exige T > k (T={Z.shape[0]}, k={k})", campo="knn_k")

    normalizada = normalizar_linhas(Z)
    S = normalizada @ normalizada.T
    np.fill_diagonal(S, -np.inf)
    vizinhos = np.argsort(-S, axis=1, kind="stable")[:, :k]
    similaridades = np.take_along_axis(S, vizinhos, axis=1)
    return float(1.0 - similaridades.mean(axis=1).mean())


def pooling_medio(Z):
    """
    Média das linhas de Z.

    Args:
        Z (np.ndarray): Matriz T×d (T >= 1)

    Returns:
        np.ndarray: Vetor d
    """
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] < 1:
        raise ErroDimensao("Pooling de matriz vazia", campo="Z")
    return Z.mean(axis=0)


def dime(z_original, z_aumentado):
    """
    Distância cosseno entre representações (1 se alguma norma for 0).
    """
    zo = np.asarray(z_original, dtype=np.float64)
    za = np.asarray(z_aumentado, dtype=np.float64)
    if zo.shape != za.shape:
        raise ErroDimensao(f"Dimensões diferentes: {zo.shape} e {za.shape}", campo="z")
    normas = np.linalg.norm(zo) * np.linalg.norm(za)
    if normas == 0.0:
        return 1.0
    return float(1.0 - np.dot(zo, za) / normas)


def lidar(z_original, z_aumentado):
    """
    Distância euclidiana entre representações.
    """
    zo = np.asarray(z_original, dtype=np.float64)
    za = np.asarray(z_aumentado, dtype=np.float64)
    if zo.shape != za.shape:
        raise ErroDimensao(f"Dimensões diferentes: {zo.shape} e {za.shape}", campo="z")
    return float(np.linalg.norm(zo - za))


def infonce(originais, aumentados, tau=TAU_PADRAO, modo="standard"):
    """
    Perda InfoNCE por sample: o par (original_i, aumentado_i) é o positivo e os
    originais dos outros samples são os negativos. Todos os vetores são
    normalizados em l2 antes da similaridade.

    Args:
        originais (array-like): n vetores originais (n >= 2)
        aumentados (array-like): n vetores aumentados
        tau (float): Temperatura (> 0)
        modo (str): 'standard' (positivo + negativos j != i no denominador) ou
            'literal' (soma sobre todos os originais j, inclusive j = i)

    Returns:
        tuple: (perdas por sample, média)
    """
    O = normalizar_linhas(originais)
    A = normalizar_linhas(aumentados)
    if O.ndim != 2 or O.shape != A.shape:
        raise ErroDimensao("originais e aumentados precisam ter a mesma forma n×d", campo="infonce")
    n = O.shape[0]
    if n < 2:
        raise ErroDimensao("InfoNCE exige ao menos 2 samples", campo="infonce")
    if not tau > 0:
        raise ErroDimensao("tau deve ser > 0", campo="tau")
    if modo not in MODOS_DENOMINADOR:
        raise ErroDimensao(f"Modo de denominador desconhecido: '{modo}'", campo="denominator")

    positivos = np.sum(O * A, axis=1) / tau
    entre_originais = (O @ O.T) / tau

    if modo == "standard":
        logits = entre_originais.copy()
        np.fill_diagonal(logits, positivos)
    else:
        logits = entre_originais

    perdas = logsumexp(logits, axis=1) - positivos
    return perdas, float(perdas.mean())


def bootstrap_ci(valores, reamostragens=REAMOSTRAGENS_BOOTSTRAP_PADRAO,
                 alpha=ALPHA_BOOTSTRAP_PADRAO, seed=0):
    """
    Intervalo percentil da média por bootstrap.
    A reamostragem r usa os contadores r·n .. r·n + n - 1 do gerador, então o
    resultado não depende da ordem em que as reamostragens são calculadas.

    Args:
        valores (array-like): Valores (>= 2)
        reamostragens (int): Número de reamostragens
        alpha (float): Nível (intervalo de 1 - alpha)
        seed (int): Semente

    Returns:
        tuple: (low, high)
    """
    valores = np.asarray(valores, dtype=np.float64)
    n = valores.size
    if n < 2:
        raise ErroDimensao("bootstrap_ci exige ao menos 2 valores", campo="values")

    u = rng.uniformes(seed, reamostragens * n).reshape(reamostragens, n)
    indices = np.minimum((u * n).astype(np.int64), n - 1)
    medias = valores[indices].mean(axis=1)
    low, high = np.percentile(medias, [100.0 * alpha / 2, 100.0 * (1 - alpha / 2)])
    return float(low), float(high)


# =============================================================================
# Relatório por camada e estágio
# =============================================================================

def montar_pares_perturbados(originais, prob_dropout=PROB_DROPOUT_PADRAO, seed=0):
    """
    Constrói o par aumentado de cada snapshot original (uma semente por sample).

    Args:
        originais (list): Snapshots originais
        prob_dropout (float): Probabilidade de descarte de cada linha de token
        seed (int): Semente principal

    Returns:
        list: [(original, aumentado), ...]
    """
    return [
        (snap, perturbar_snapshot(snap, prob_dropout, rng.derivar_seed(seed, i)))
        for i, snap in enumerate(originais)
    ]


def _validar_pares(pares):
    if len(pares) < 2:
        raise ErroDimensao("O relatório exige ao menos 2 samples", campo="samples")
    referencia = pares[0][0]
    for original, aumentado in pares:
        if original.marcador != "original" or aumentado.marcador != "augmented":
            raise ErroDimensao("Par fora de ordem (original, augmented)", campo="pair_tag")
        for snap in (original, aumentado):
            if (snap.num_camadas != referencia.num_camadas
                    or snap.estagios != referencia.estagios
                    or snap.dim_oculta != referencia.dim_oculta):
                raise ErroDimensao("Snapshots com L, estágios ou d diferentes", campo="snapshot")
    return referencia


def calcular_relatorio_metricas(pares, config=None, seed=0):
    """
    Calcula as seis métricas por (camada, estágio) sobre um conjunto de samples.
    Cada métrica é calculada por sample, agregada pela média e acompanhada do
    intervalo bootstrap sobre os valores por sample.

    Args:
        pares (list): [(snapshot original, snapshot aumentado), ...]
        config (ConfigMetricas): Configuração (padrão: valores de referência)
        seed (int): Semente do bootstrap

    Returns:
        RelatorioMetricas: Relatório com uma linha por (camada, estágio, métrica)
    """
    config = config or ConfigMetricas()
    referencia = _validar_pares(pares)

    linhas = []
    for camada in range(referencia.num_camadas):
        for idx_estagio, estagio in enumerate(referencia.estagios):
            matrizes = [original.matriz(camada, estagio) for original, _ in pares]
            pooled_o = np.stack([pooling_medio(Z) for Z in matrizes])
            pooled_a = np.stack([pooling_medio(a.matriz(camada, estagio)) for _, a in pares])

            por_sample = {
                "spectral_entropy": [entropia_espectral(Z) for Z in matrizes],
                "effective_rank": [posto_efetivo(Z) for Z in matrizes],
                "curvature": [curvatura(Z, config.knn_k) for Z in matrizes],
                "dime": [dime(o, a) for o, a in zip(pooled_o, pooled_a)],
                "lidar": [lidar(o, a) for o, a in zip(pooled_o, pooled_a)],
                "infonce": infonce(pooled_o, pooled_a, config.tau, config.modo_denominador)[0],
            }

            for idx_metrica, metrica in enumerate(METRICAS):
                valores = np.asarray(por_sample[metrica], dtype=np.float64)
                identificador = (camada * len(referencia.estagios) + idx_estagio) * len(METRICAS)
                low, high = bootstrap_ci(
                    valores,
                    config.reamostragens_bootstrap,
                    config.alpha_bootstrap,
                    rng.derivar_seed(seed, identificador + idx_metrica)
                )
                linhas.append({
                    "layer": camada,
                    "stage": estagio,
                    "metric": metrica,
                    "value": float(valores.mean()),
                    "ci_low": low,
                    "ci_high": high
                })

    return RelatorioMetricas(tuple(linhas))


def metrica_por_camada(relatorio, metrica="infonce", estagio="post-attention"):
    """
    Curva de uma métrica ao longo das camadas (entrada do MGA/MLMA).

    Args:
        relatorio (RelatorioMetricas): Relatório calculado
        metrica (str): Nome da métrica
        estagio (str): Estágio

    Returns:
        np.ndarray: Um valor por camada
    """
    valores = {
        linha["layer"]: linha["value"]
        for linha in relatorio.linhas
        if linha["metric"] == metrica and linha["stage"] == estagio
    }
    if not valores:
        raise ErroDimensao(f"Relatório sem '{metrica}' no estágio '{estagio}'", campo="metric")
    return np.array([valores[c] for c in sorted(valores)], dtype=np.float64)

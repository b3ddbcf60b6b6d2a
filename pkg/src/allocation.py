"""
Módulo de alocação de budget de KV por camada.
Estratégias: uniforme, MLP (proteção das camadas do meio), MGA (guiada por
métrica, com teto rho_max) e MLMA (híbrida), além do plano de ablação de uma
camada usado no estudo de sensibilidade. Índices de camada começam em 0.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from src.config import EPSILON_TRANSFORMACAO, RHO_MAX_PADRAO
from src.errors import ErroDimensao, ErroOrcamentoInviavel


TOLERANCIA_VIABILIDADE = 1e-9
MODOS_TRANSFORMACAO = ("deslocamento_minimo", "posto")
VARIANTES_MLMA = (2, 4, 6)


@dataclass(frozen=True, eq=False)
class PlanoOrcamento:
    estrategia: str
    num_camadas: int
    rho: float
    razoes: np.ndarray
    protegidas: tuple = ()
    rho_max: float = RHO_MAX_PADRAO

    def __post_init__(self):
        razoes = np.array(self.razoes, dtype=np.float64, copy=True)
        if razoes.shape != (self.num_camadas,):
            raise ErroDimensao(
                f"Plano com {razoes.size} razões para {self.num_camadas} camadas", campo="ratios"
            )
        razoes.setflags(write=False)
        object.__setattr__(self, "razoes", razoes)
        object.__setattr__(self, "protegidas", tuple(sorted(int(p) for p in self.protegidas)))


@dataclass(frozen=True)
class ContagensCamada:
    contagens: tuple
    total: int


def _validar_rho(rho, campo="rho"):
    if not 0.0 <= rho < 1.0:
        raise ErroDimensao(f"rho deve estar em [0, 1) (recebido {rho})", campo=campo)


def _camadas_do_meio(num_camadas, quantidade):
    meio = num_camadas // 2
    extra = quantidade // 2 - 1
    return list(range(meio - extra, meio + 2 + extra))


def transformar_metrica(metrica, indices, modo="deslocamento_minimo"):
    """
    Transforma a métrica por camada em scores positivos (maior = camada mais
    robusta, que aceita mais poda), só sobre as camadas podadas.

    Args:
        metrica (array-like): Um valor por camada (InfoNCE)
        indices (list): Camadas podadas
        modo (str): 'deslocamento_minimo' (metrica - min + eps) ou 'posto'

    Returns:
        np.ndarray: Scores das camadas em `indices`
    """
    valores = np.asarray(metrica, dtype=np.float64)[indices]
    if not np.all(np.isfinite(valores)):
        raise ErroDimensao("Métrica contém valores não finitos", campo="metric")

    if modo == "deslocamento_minimo":
        return valores - valores.min() + EPSILON_TRANSFORMACAO
    if modo == "posto":
        return rankdata(valores, method="average")
    raise ErroDimensao(f"Transformação desconhecida: '{modo}'", campo="transform")


def distribuir_com_teto(total, pesos, teto):
    """
    Distribui `total` proporcionalmente a `pesos`, limitando cada parte a `teto`.
    Camadas saturadas ficam no teto e o excesso é redistribuído entre as
    restantes, proporcionalmente aos pesos, até nenhuma passar do teto.

    Args:
        total (float): Massa a distribuir (L·rho)
        pesos (np.ndarray): Pesos positivos (alfa)
        teto (float): rho_max

    Returns:
        np.ndarray: Partes, somando `total`
    """
    pesos = np.asarray(pesos, dtype=np.float64)
    partes = np.zeros_like(pesos)
    livres = np.ones(pesos.size, dtype=bool)
    restante = float(total)

    while livres.any():
        proposta = restante * pesos[livres] / pesos[livres].sum()
        saturadas = proposta > teto
        if not saturadas.any():
            partes[livres] = proposta
            break
        indices_livres = np.flatnonzero(livres)
        partes[indices_livres[saturadas]] = teto
        livres[indices_livres[saturadas]] = False
        restante -= teto * int(saturadas.sum())

    return partes


def plano_uniforme(num_camadas, rho, proteger_primeira=False):
    """
    Plano uniforme: todas as camadas com a mesma razão de poda.

    Args:
        num_camadas (int): L
        rho (float): Razão global em [0, 1)
        proteger_primeira (bool): Se True, a camada 0 não é podada e as
            demais recebem L·rho/(L-1)

    Returns:
        PlanoOrcamento: Plano 'uniform'
    """
    if num_camadas < 1:
        raise ErroDimensao("L deve ser >= 1", campo="layers")
    _validar_rho(rho)

    if not proteger_primeira:
        return PlanoOrcamento("uniform", num_camadas, rho, np.full(num_camadas, float(rho)))

    if num_camadas < 2:
        raise ErroDimensao("Proteger a camada 0 exige L >= 2", campo="layers")
    razao = num_camadas * rho / (num_camadas - 1)
    if razao > 1.0 + TOLERANCIA_VIABILIDADE:
        raise ErroOrcamentoInviavel(
            f"Razão por camada {razao:.4f} > 1 com a camada 0 protegida", campo="rho"
        )
    razoes = np.full(num_camadas, min(razao, 1.0))
    razoes[0] = 0.0
    return PlanoOrcamento("uniform", num_camadas, rho, razoes, protegidas=(0,))


def plano_mlp(num_camadas, rho):
    """
    Middle-Layer Protection: camadas 0, floor(L/2) e floor(L/2)+1 sem poda;
    as demais podadas uniformemente para manter a média global rho.

    Args:
        num_camadas (int): L (>= 4)
        rho (float): Razão global

    Returns:
        PlanoOrcamento: Plano 'mlp'

    Raises:
        ErroOrcamentoInviavel: Se a razão por camada passar de 1
    """
    if num_camadas < 4:
        raise ErroDimensao("MLP exige L >= 4", campo="layers")
    _validar_rho(rho)

    protegidas = sorted({0, *_camadas_do_meio(num_camadas, 2)})
    podadas = [l for l in range(num_camadas) if l not in protegidas]
    razao = num_camadas * rho / len(podadas)
    if razao > 1.0 + TOLERANCIA_VIABILIDADE:
        raise ErroOrcamentoInviavel(
            f"MLP inviável: razão por camada {razao:.4f} > 1 (L={num_camadas}, rho={rho})",
            campo="rho"
        )

    razoes = np.zeros(num_camadas)
    razoes[podadas] = min(razao, 1.0)
    return PlanoOrcamento("mlp", num_camadas, rho, razoes, protegidas=protegidas)


def _alocacao_guiada(estrategia, num_camadas, rho, metrica, protegidas, rho_max, transformacao):
    if len(metrica) != num_camadas:
        raise ErroDimensao(
            f"Métrica com {len(metrica)} valores para {num_camadas} camadas", campo="metric"
        )
    if not 0.0 < rho_max <= 1.0:
        raise ErroDimensao(f"rho_max deve estar em (0, 1] (recebido {rho_max})", campo="rho_max")

    podadas = [l for l in range(num_camadas) if l not in protegidas]
    total = num_camadas * rho
    if total > rho_max * len(podadas) + TOLERANCIA_VIABILIDADE:
        raise ErroOrcamentoInviavel(
            f"{estrategia.upper()} inviável: L·rho = {total:.4f} > rho_max·{len(podadas)} "
            f"= {rho_max * len(podadas):.4f}",
            campo="rho"
        )

    scores = transformar_metrica(metrica, podadas, transformacao)
    alfa = scores / scores.sum()

    razoes = np.zeros(num_camadas)
    razoes[podadas] = np.minimum(distribuir_com_teto(total, alfa, rho_max), rho_max)
    return PlanoOrcamento(estrategia, num_camadas, rho, razoes, protegidas, rho_max)


def plano_mga(num_camadas, rho, metrica, rho_max=RHO_MAX_PADRAO, transformacao="deslocamento_minimo"):
    """
    Metric-Guided Allocation: camadas 1..L-1 recebem poda proporcional ao
    score derivado da métrica, com teto rho_max e redistribuição do excesso.

    Args:
        num_camadas (int): L (>= 2)
        rho (float): Razão global
        metrica (array-like): InfoNCE por camada (maior = mais robusta)
        rho_max (float): Teto por camada
        transformacao (str): Transformação métrica -> score

    Returns:
        PlanoOrcamento: Plano 'mga'
    """
    if num_camadas < 2:
        raise ErroDimensao("MGA exige L >= 2", campo="layers")
    _validar_rho(rho)
    return _alocacao_guiada("mga", num_camadas, rho, metrica, [0], rho_max, transformacao)


def plano_mlma(num_camadas, rho, metrica, camadas_meio=2, rho_max=RHO_MAX_PADRAO,
               transformacao="deslocamento_minimo"):
    """
    Middle-Layer Metric Allocation: protege a camada 0 e as `camadas_meio`
    camadas centradas no meio da rede; distribui L·rho nas demais como no MGA.

    Args:
        num_camadas (int): L (> m + 1)
        rho (float): Razão global
        metrica (array-like): InfoNCE por camada
        camadas_meio (int): m em {2, 4, 6}
        rho_max (float): Teto por camada
        transformacao (str): Transformação métrica -> score

    Returns:
        PlanoOrcamento: Plano 'mlma-<m>'
    """
    if camadas_meio not in VARIANTES_MLMA:
        raise ErroDimensao(f"m deve ser 2, 4 ou 6 (recebido {camadas_meio})", campo="middle")
    if num_camadas <= camadas_meio + 1:
        raise ErroDimensao(f"MLMA-{camadas_meio} exige L > {camadas_meio + 1}", campo="layers")
    _validar_rho(rho)

    protegidas = sorted({0, *_camadas_do_meio(num_camadas, camadas_meio)})
    return _alocacao_guiada(
        f"mlma-{camadas_meio}", num_camadas, rho, metrica, protegidas, rho_max, transformacao
    )


def plano_ablacao_camada(num_camadas, camada, rho_camada):
    """
    Plano de ablação: só `camada` é podada (razão rho_camada); razão global
    resultante é rho_camada / L.

    Args:
        num_camadas (int): L
        camada (int): Camada podada
        rho_camada (float): Razão de poda dessa camada em [0, 1]

    Returns:
        PlanoOrcamento: Plano 'ablation-<camada>'
    """
    if not 0 <= camada < num_camadas:
        raise ErroDimensao(f"Camada {camada} fora do intervalo", campo="layer")
    if not 0.0 <= rho_camada <= 1.0:
        raise ErroDimensao(f"rho_camada deve estar em [0, 1] (recebido {rho_camada})", campo="rho")

    razoes = np.zeros(num_camadas)
    razoes[camada] = rho_camada
    protegidas = [l for l in range(num_camadas) if l != camada]
    return PlanoOrcamento(
        f"ablation-{camada}", num_camadas, rho_camada / num_camadas, razoes, protegidas, 1.0
    )


def razoes_para_contagens(plano, tamanho_seq):
    """
    Converte razões em budgets inteiros B^(l) com soma exata B_total.
    B_total = round(sum((1 - rho_l)·N)); cada alvo real é arredondado pelo
    método do maior resto (empates para o menor índice). Toda camada fica com
    ao menos 1 token; o déficit sai da camada com maior contagem.

    Args:
        plano (PlanoOrcamento): Plano de razões
        tamanho_seq (int): N

    Returns:
        ContagensCamada: Budgets por camada e total
    """
    if tamanho_seq < 1:
        raise ErroDimensao("N deve ser >= 1", campo="N")

    alvos = (1.0 - plano.razoes) * tamanho_seq
    total = int(math.floor(float(alvos.sum()) + 0.5))
    contagens = np.floor(alvos + TOLERANCIA_VIABILIDADE).astype(np.int64)
    contagens = np.clip(contagens, 0, tamanho_seq)
    restos = alvos - contagens

    diferenca = total - int(contagens.sum())
    if diferenca > 0:
        candidatos = [l for l in np.argsort(-restos, kind="stable") if contagens[l] < tamanho_seq]
        for l in candidatos[:diferenca]:
            contagens[l] += 1
    elif diferenca < 0:
        candidatos = [l for l in np.argsort(restos, kind="stable") if contagens[l] > 0]
        for l in candidatos[:-diferenca]:
            contagens[l] -= 1

    for l in np.flatnonzero(contagens < 1):
        doadora = int(np.argmax(contagens))
        if contagens[doadora] > 1:
            contagens[doadora] -= 1
        contagens[l] = 1

    contagens = tuple(int(c) for c in contagens)
    return ContagensCamada(contagens, sum(contagens))


def plano_para_dict(plano, contagens=None):
    """
    Forma JSON do plano: {strategy, L, rho, rho_max, ratios, protected, counts}.
    """
    return {
        "strategy": plano.estrategia,
        "L": plano.num_camadas,
        "rho": plano.rho,
        "rho_max": plano.rho_max,
        "ratios": [float(r) for r in plano.razoes],
        "protected": list(plano.protegidas),
        "counts": list(contagens.contagens) if contagens is not None else []
    }


def plano_de_dict(dados):
    """
    Reconstrói um plano a partir da forma JSON.
    """
    try:
        return PlanoOrcamento(
            estrategia=dados["strategy"],
            num_camadas=int(dados["L"]),
            rho=float(dados["rho"]),
            razoes=dados["ratios"],
            protegidas=dados.get("protected", []),
            rho_max=float(dados.get("rho_max", RHO_MAX_PADRAO))
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ErroDimensao(f"Plano JSON inválido: {e}", campo="plan")

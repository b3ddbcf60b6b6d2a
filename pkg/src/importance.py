"""
Módulo de importância de tokens.
Pesos de atenção causal, scores H2O (só atenção) e value-aware, e seleção
dos tokens retidos por camada.
"""

from dataclasses import dataclass

import numpy as np

from src.errors import ErroDimensao


AGREGACOES_VALOR = ("vetor_medio", "media_normas")


@dataclass(frozen=True, eq=False)
class ScoresImportancia:
    camada: int
    scores: np.ndarray


@dataclass(frozen=True)
class ConjuntoRetido:
    camada: int
    indices: tuple
    orcamento: int


def _validar_camada(trace, camada):
    if not 0 <= camada < trace.cabecalho.num_camadas:
        raise ErroDimensao(
            f"Camada {camada} fora do intervalo [0, {trace.cabecalho.num_camadas})", campo="camada"
        )


def scores_bloco(Q_cabeca, K_cabeca, linhas, colunas):
    """
    Scores escalados <Q_i, K_j>/sqrt(d_k) para as linhas e colunas pedidas.
    Entradas com j > i recebem -inf (máscara causal).

    Args:
        Q_cabeca (np.ndarray): Queries [N][d_k] de uma cabeça
        K_cabeca (np.ndarray): Keys [N][d_k] de uma cabeça
        linhas (np.ndarray): Índices das queries
        colunas (np.ndarray): Índices das keys

    Returns:
        np.ndarray: Matriz [len(linhas)][len(colunas)] em float64
    """
    dim_chave = Q_cabeca.shape[-1]
    Q = Q_cabeca[linhas].astype(np.float64)
    K = K_cabeca[colunas].astype(np.float64)
    a = (Q @ K.T) / np.sqrt(dim_chave)
    a[colunas[np.newaxis, :] > linhas[:, np.newaxis]] = -np.inf
    return a


def calcular_scores_atencao(trace, camada, cabeca):
    """
    Matriz de scores de atenção a[i][j] = <Q_i, K_j>/sqrt(d_k) de uma cabeça.

    Args:
        trace (TraceAtencao): Trace de atenção
        camada (int): Índice da camada
        cabeca (int): Índice da cabeça

    Returns:
        np.ndarray: Matriz N×N; entradas com j > i são -inf (mascaradas)

    Raises:
        ErroDimensao: Se camada ou cabeça estiverem fora do intervalo
    """
    _validar_camada(trace, camada)
    if not 0 <= cabeca < trace.cabecalho.num_cabecas:
        raise ErroDimensao(f"Cabeça {cabeca} fora do intervalo", campo="cabeca")

    indices = np.arange(trace.cabecalho.tamanho_seq)
    return scores_bloco(trace.Q[camada, cabeca], trace.K[camada, cabeca], indices, indices)


def normalizar_atencao(a):
    """
    Softmax por linha sobre as posições visíveis (entradas finitas).
    Subtrai o máximo da linha antes da exponencial; posições mascaradas ficam 0.

    Args:
        a (np.ndarray): Scores com máscara causal (-inf)

    Returns:
        np.ndarray: Pesos alfa, cada linha somando 1
    """
    a = np.asarray(a, dtype=np.float64)
    maximo = np.max(a, axis=-1, keepdims=True)
    e = np.exp(a - maximo)
    return e / np.sum(e, axis=-1, keepdims=True)


def pesos_agregados(trace, camada, linhas=None, colunas=None):
    """
    Pesos de atenção médios entre as cabeças (agregação após o softmax).
    O softmax de cada linha é feito sobre as colunas fornecidas.

    Args:
        trace (TraceAtencao): Trace de atenção
        camada (int): Índice da camada
        linhas (np.ndarray): Queries (padrão: todas)
        colunas (np.ndarray): Keys visíveis (padrão: todas)

    Returns:
        np.ndarray: Matriz [len(linhas)][len(colunas)]
    """
    N = trace.cabecalho.tamanho_seq
    linhas = np.arange(N) if linhas is None else np.asarray(linhas)
    colunas = np.arange(N) if colunas is None else np.asarray(colunas)

    soma = np.zeros((linhas.size, colunas.size), dtype=np.float64)
    for cabeca in range(trace.cabecalho.num_cabecas):
        a = scores_bloco(trace.Q[camada, cabeca], trace.K[camada, cabeca], linhas, colunas)
        soma += normalizar_atencao(a)
    return soma / trace.cabecalho.num_cabecas


def atencao_recebida(pesos, linhas, colunas):
    """
    Soma, por coluna, da atenção recebida de queries posteriores (i > j).

    Args:
        pesos (np.ndarray): Pesos agregados [linhas][colunas]
        linhas (np.ndarray): Índices das queries
        colunas (np.ndarray): Índices das keys

    Returns:
        np.ndarray: Vetor com uma soma por coluna
    """
    posteriores = linhas[:, np.newaxis] > colunas[np.newaxis, :]
    return np.sum(np.where(posteriores, pesos, 0.0), axis=0)


def normas_valor(trace, camada, p_norm=1, agregacao="vetor_medio"):
    """
    Norma ||V_j||_p por token, agregando as cabeças.

    Args:
        trace (TraceAtencao): Trace de atenção
        camada (int): Índice da camada
        p_norm (int): 1 ou 2
        agregacao (str): 'vetor_medio' (norma do vetor médio entre cabeças) ou
            'media_normas' (média das normas por cabeça)

    Returns:
        np.ndarray: Vetor de N normas
    """
    if p_norm not in (1, 2):
        raise ErroDimensao(f"p_norm deve ser 1 ou 2 (recebido {p_norm})", campo="p_norm")
    if agregacao not in AGREGACOES_VALOR:
        raise ErroDimensao(f"Agregação de valor desconhecida: '{agregacao}'", campo="agregacao")

    V = trace.V[camada].astype(np.float64)
    if agregacao == "vetor_medio":
        return np.linalg.norm(V.mean(axis=0), ord=p_norm, axis=-1)
    return np.linalg.norm(V, ord=p_norm, axis=-1).mean(axis=0)


def importancia_h2o(trace, camada):
    """
    Score H2O: atenção acumulada que cada token recebe dos tokens posteriores,
    com os pesos médios entre as cabeças.

    Args:
        trace (TraceAtencao): Trace de atenção
        camada (int): Índice da camada

    Returns:
        ScoresImportancia: N scores não negativos (o último é 0)
    """
    _validar_camada(trace, camada)
    indices = np.arange(trace.cabecalho.tamanho_seq)
    pesos = pesos_agregados(trace, camada, indices, indices)
    return ScoresImportancia(camada, atencao_recebida(pesos, indices, indices))


def importancia_value_aware(trace, camada, p_norm=1, agregacao="vetor_medio"):
    """
    Score value-aware: ||V_j||_p vezes o score H2O do token.

    Args:
        trace (TraceAtencao): Trace de atenção
        camada (int): Índice da camada
        p_norm (int): Norma usada (1 por padrão)
        agregacao (str): Agregação das cabeças para a norma do valor

    Returns:
        ScoresImportancia: N scores não negativos
    """
    h2o = importancia_h2o(trace, camada)
    normas = normas_valor(trace, camada, p_norm, agregacao)
    return ScoresImportancia(camada, normas * h2o.scores)


def calcular_importancia(trace, camada, pontuador="h2o", agregacao="vetor_medio"):
    """
    Despacha para o pontuador configurado ('h2o', 'value_aware_l1', 'value_aware_l2').
    """
    if pontuador == "h2o":
        return importancia_h2o(trace, camada)
    if pontuador == "value_aware_l1":
        return importancia_value_aware(trace, camada, 1, agregacao)
    if pontuador == "value_aware_l2":
        return importancia_value_aware(trace, camada, 2, agregacao)
    raise ErroDimensao(f"Pontuador desconhecido: '{pontuador}'", campo="scorer")


def ordem_top(scores, quantidade):
    """
    Índices dos `quantidade` maiores scores; empates favorecem o menor índice.
    Retorna em ordem crescente de índice.
    """
    ordem = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")[:quantidade]
    return np.sort(ordem)


def selecionar_top_tokens(scores, orcamento):
    """
    Seleciona os B tokens de maior importância.

    Args:
        scores (ScoresImportancia): Scores da camada
        orcamento (int): Budget B da camada (0 <= B <= N)

    Returns:
        ConjuntoRetido: Índices crescentes, sem repetição

    Raises:
        ErroDimensao: Se B estiver fora de [0, N]
    """
    N = len(scores.scores)
    if not 0 <= orcamento <= N:
        raise ErroDimensao(f"Budget {orcamento} fora de [0, {N}]", campo="budget")

    indices = ordem_top(scores.scores, orcamento)
    return ConjuntoRetido(scores.camada, tuple(int(i) for i in indices), int(orcamento))

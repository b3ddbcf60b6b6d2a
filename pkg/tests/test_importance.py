import math

import numpy as np
import pytest

from src.errors import ErroDimensao
from src.importance import (
    ScoresImportancia, atencao_recebida, calcular_importancia, calcular_scores_atencao,
    importancia_h2o, importancia_value_aware, normalizar_atencao, selecionar_top_tokens
)
from src.trace import gerar_trace_sintetico


def importancia_ingenua(trace, camada, p_norm=None):
    """Oráculo O(H·N²) com laços explícitos."""
    c = trace.cabecalho
    N, H = c.tamanho_seq, c.num_cabecas
    alfa = np.zeros((N, N))
    for h in range(H):
        Q = trace.Q[camada, h].astype(np.float64)
        K = trace.K[camada, h].astype(np.float64)
        for i in range(N):
            linha = [sum(Q[i, t] * K[j, t] for t in range(c.dim_chave)) / math.sqrt(c.dim_chave)
                     for j in range(i + 1)]
            maximo = max(linha)
            exps = [math.exp(x - maximo) for x in linha]
            total = sum(exps)
            for j in range(i + 1):
                alfa[i, j] += exps[j] / total / H

    scores = [sum(alfa[i, j] for i in range(j + 1, N)) for j in range(N)]
    if p_norm is None:
        return np.array(scores)
    V = trace.V[camada].astype(np.float64).mean(axis=0)
    normas = [sum(abs(x) ** p_norm for x in V[j]) ** (1.0 / p_norm) for j in range(N)]
    return np.array([n * s for n, s in zip(normas, scores)])


def top_ingenuo(scores, orcamento):
    ordem = sorted(range(len(scores)), key=lambda j: (-scores[j], j))
    return tuple(sorted(ordem[:orcamento]))


def test_scores_de_atencao_a_mao(construir_trace):
    Q = np.array([2.0, 4.0]).reshape(1, 1, 2, 1)
    K = np.array([3.0, 5.0]).reshape(1, 1, 2, 1)
    a = calcular_scores_atencao(construir_trace(Q, K, np.ones((1, 1, 2, 1))), 0, 0)
    assert a[1, 0] == 12.0
    assert a[0, 0] == 6.0
    assert a[0, 1] == -np.inf


def test_scores_de_atencao_vetores_de_uns(construir_trace):
    uns = np.ones((1, 1, 3, 4))
    a = calcular_scores_atencao(construir_trace(uns, uns, uns), 0, 0)
    assert np.all(a[np.tril_indices(3)] == 2.0)


def test_scores_zero(construir_trace):
    zeros = np.zeros((1, 1, 3, 2))
    a = calcular_scores_atencao(construir_trace(zeros, zeros, zeros), 0, 0)
    assert np.all(a[np.tril_indices(3)] == 0.0)


def test_softmax():
    a = np.array([[0.0, -np.inf], [0.0, math.log(3.0)]])
    alfa = normalizar_atencao(a)
    assert alfa[0, 0] == 1.0 and alfa[0, 1] == 0.0
    assert alfa[1] == pytest.approx([0.25, 0.75], abs=1e-12)

    iguais = normalizar_atencao(np.array([[1.0, 1.0, 1.0, 1.0]]))
    assert iguais[0] == pytest.approx([0.25] * 4)


def test_atencao_recebida_abaixo_da_diagonal():
    pesos = np.array([[1, 0, 0], [0.5, 0.5, 0], [0.2, 0.3, 0.5]])
    indices = np.arange(3)
    assert atencao_recebida(pesos, indices, indices) == pytest.approx([0.7, 0.3, 0.0])


def test_n_igual_a_um():
    trace = gerar_trace_sintetico(1, 2, 1, 3, 3, seed=1)
    assert list(importancia_h2o(trace, 0).scores) == [0.0]


def test_cabecas_identicas(construir_trace):
    trace = gerar_trace_sintetico(1, 1, 6, 3, 2, seed=4)
    duplicado = construir_trace(
        np.repeat(trace.Q, 2, axis=1), np.repeat(trace.K, 2, axis=1), np.repeat(trace.V, 2, axis=1)
    )
    np.testing.assert_allclose(importancia_h2o(duplicado, 0).scores,
                               importancia_h2o(trace, 0).scores, rtol=1e-12, atol=1e-15)


def test_valores_nulos(construir_trace):
    trace = gerar_trace_sintetico(1, 1, 5, 2, 2, seed=3)
    sem_valor = construir_trace(trace.Q, trace.K, np.zeros_like(trace.V))
    assert np.all(importancia_value_aware(sem_valor, 0).scores == 0.0)


def test_norma_l2_a_mao(construir_trace):
    # Q = K = 0: atenção uniforme sobre as posições visíveis
    Q = np.zeros((1, 1, 3, 1))
    K = np.zeros((1, 1, 3, 1))
    V = np.array([[3.0, -4.0], [1.0, 0.0], [1.0, 0.0]]).reshape(1, 1, 3, 2)
    trace = construir_trace(Q, K, V)
    h2o = importancia_h2o(trace, 0).scores
    assert h2o[0] == pytest.approx(0.5 + 1.0 / 3.0)
    l2 = importancia_value_aware(trace, 0, p_norm=2).scores
    assert l2[0] == pytest.approx(5.0 * h2o[0])


def test_normas_iguais_preservam_top_k(construir_trace):
    trace = gerar_trace_sintetico(1, 2, 10, 3, 2, seed=21)
    V = np.zeros((1, 2, 10, 2))
    V[..., 0] = 2.5
    constante = construir_trace(trace.Q, trace.K, V)
    h2o = importancia_h2o(constante, 0)
    va = importancia_value_aware(constante, 0, p_norm=1)
    np.testing.assert_allclose(va.scores, 2.5 * h2o.scores, rtol=1e-12)
    assert selecionar_top_tokens(va, 4).indices == selecionar_top_tokens(h2o, 4).indices


@pytest.mark.parametrize("caso", range(40))
def test_oraculo_ingenuo(caso):
    gerador = np.random.default_rng(caso)
    L, H = int(gerador.integers(1, 4)), int(gerador.integers(1, 4))
    N, dk, dv = int(gerador.integers(1, 24)), int(gerador.integers(1, 5)), int(gerador.integers(1, 5))
    trace = gerar_trace_sintetico(L, H, N, dk, dv, seed=caso)
    camada = int(gerador.integers(0, L))
    orcamento = int(gerador.integers(0, N + 1))

    for pontuador, p_norm in (("h2o", None), ("value_aware_l1", 1), ("value_aware_l2", 2)):
        obtido = calcular_importancia(trace, camada, pontuador).scores
        esperado = importancia_ingenua(trace, camada, p_norm)
        np.testing.assert_allclose(obtido, esperado, rtol=1e-6, atol=1e-9)
        retidos = selecionar_top_tokens(ScoresImportancia(camada, obtido), orcamento).indices
        assert retidos == top_ingenuo(list(obtido), orcamento)


@pytest.mark.parametrize("c", [0.1, 1.0, 10.0])
def test_escala_dos_valores_nao_muda_o_top_k(construir_trace, c):
    for seed in range(20):
        trace = gerar_trace_sintetico(1, 2, 16, 4, 3, seed=seed)
        escalado = construir_trace(trace.Q, trace.K, trace.V * np.float32(c))
        for pontuador in ("value_aware_l1", "value_aware_l2"):
            base = selecionar_top_tokens(calcular_importancia(trace, 0, pontuador), 6)
            novo = selecionar_top_tokens(calcular_importancia(escalado, 0, pontuador), 6)
            assert base.indices == novo.indices


def test_selecao_top():
    scores = ScoresImportancia(0, np.array([0.7, 0.3, 0.0]))
    assert selecionar_top_tokens(scores, 2).indices == (0, 1)
    assert selecionar_top_tokens(scores, 3).indices == (0, 1, 2)
    assert selecionar_top_tokens(scores, 0).indices == ()

    empatados = ScoresImportancia(0, np.array([0.5, 0.5, 0.5]))
    assert selecionar_top_tokens(empatados, 2).indices == (0, 1)


def test_selecao_fora_do_intervalo():
    scores = ScoresImportancia(0, np.zeros(3))
    with pytest.raises(ErroDimensao):
        selecionar_top_tokens(scores, 4)
    with pytest.raises(ErroDimensao):
        selecionar_top_tokens(scores, -1)


def test_camada_invalida(trace_pequeno):
    with pytest.raises(ErroDimensao):
        importancia_h2o(trace_pequeno, 5)
    with pytest.raises(ErroDimensao):
        calcular_importancia(trace_pequeno, 0, "outro")

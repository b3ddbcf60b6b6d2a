import math

import numpy as np
import pytest

from src.allocation import PlanoOrcamento, plano_mga, plano_uniforme, razoes_para_contagens
from src.errors import ErroDimensao
from src.importance import calcular_importancia, selecionar_top_tokens
from src.prefill_sim import (
    CachePodado, ConfigPrefill, comparar_planos, executar_prefill_em_chunks, jaccard,
    pegada_memoria, relatorio_cache
)
from src.trace import CabecalhoTrace, gerar_trace_sintetico


def norma_valor_referencia(trace, camada, j, p):
    c = trace.cabecalho
    media = [sum(float(trace.V[camada, h, j, k]) for h in range(c.num_cabecas)) / c.num_cabecas
             for k in range(c.dim_valor)]
    if p == 1:
        return sum(abs(x) for x in media)
    return math.sqrt(sum(x * x for x in media))


def simulador_referencia(trace, camada, orcamento, tamanho_chunk, pontuador="h2o",
                         modo="conjunto_visivel"):
    """
    Prefill em chunks com laços explícitos. No modo 'conjunto_visivel' o softmax
    de cada query cobre só os candidatos j <= i; no replay cobre todo o contexto
    0..i e só os candidatos acumulam.
    """
    c = trace.cabecalho
    p = {"h2o": None, "value_aware_l1": 1, "value_aware_l2": 2}[pontuador]
    peso_valor = [1.0 if p is None else norma_valor_referencia(trace, camada, j, p)
                  for j in range(c.tamanho_seq)]
    acumulado = [0.0] * c.tamanho_seq
    retidos = []
    for inicio in range(0, c.tamanho_seq, tamanho_chunk):
        novos = list(range(inicio, min(inicio + tamanho_chunk, c.tamanho_seq)))
        candidatos = retidos + novos
        for i in novos:
            if modo == "conjunto_visivel":
                visiveis = [j for j in candidatos if j <= i]
            else:
                visiveis = list(range(i + 1))
            for h in range(c.num_cabecas):
                q = trace.Q[camada, h, i].astype(np.float64)
                logits = [float(q @ trace.K[camada, h, j].astype(np.float64)) / math.sqrt(c.dim_chave)
                          for j in visiveis]
                maximo = max(logits)
                exps = [math.exp(x - maximo) for x in logits]
                total = sum(exps)
                for j, e in zip(visiveis, exps):
                    if j < i and j in candidatos:
                        acumulado[j] += e / total / c.num_cabecas
        ordem = sorted(candidatos, key=lambda j: (-acumulado[j] * peso_valor[j], j))[:orcamento]
        retidos = sorted(ordem)
    return tuple(retidos)


def _plano_com_razao(L, razao):
    return PlanoOrcamento("custom", L, razao, [razao] * L)


def test_sem_poda_retem_tudo():
    trace = gerar_trace_sintetico(2, 2, 10, 3, 3, seed=1)
    for modo in ("conjunto_visivel", "replay_contexto_completo"):
        cache = executar_prefill_em_chunks(
            trace, ConfigPrefill(_plano_com_razao(2, 0.0), tamanho_chunk=3, modo_atencao=modo)
        )
        assert cache.conjuntos == (tuple(range(10)), tuple(range(10)))


def test_dois_chunks_contra_referencia():
    trace = gerar_trace_sintetico(1, 1, 8, 4, 4, seed=5)
    cache = executar_prefill_em_chunks(
        trace, ConfigPrefill(_plano_com_razao(1, 0.5), tamanho_chunk=4)
    )
    assert cache.orcamentos == (4,)
    assert cache.historico[0][0] == (0, 1, 2, 3)
    assert cache.conjuntos[0] == simulador_referencia(trace, 0, 4, 4)


@pytest.mark.parametrize("caso", range(30))
def test_multiplos_chunks_contra_referencia(caso):
    gerador = np.random.default_rng(100 + caso)
    L, H = int(gerador.integers(1, 3)), int(gerador.integers(1, 4))
    N = int(gerador.integers(2, 40))
    trace = gerar_trace_sintetico(L, H, N, 3, 2, seed=caso)
    chunk = int(gerador.integers(1, N + 1))
    razao = float(gerador.uniform(0.0, 0.9))

    plano = _plano_com_razao(L, razao)
    cache = executar_prefill_em_chunks(trace, ConfigPrefill(plano, tamanho_chunk=chunk))
    for camada, orcamento in enumerate(cache.orcamentos):
        assert cache.conjuntos[camada] == simulador_referencia(trace, camada, orcamento, chunk)
        assert len(cache.conjuntos[camada]) == min(orcamento, N)


@pytest.mark.parametrize("modo", ["conjunto_visivel", "replay_contexto_completo"])
@pytest.mark.parametrize("pontuador", ["h2o", "value_aware_l1", "value_aware_l2"])
@pytest.mark.parametrize("caso", range(10))
def test_pontuadores_e_modos_contra_referencia(caso, pontuador, modo):
    gerador = np.random.default_rng(500 + caso)
    L, H = int(gerador.integers(1, 3)), int(gerador.integers(1, 4))
    N = int(gerador.integers(6, 36))
    trace = gerar_trace_sintetico(L, H, N, 3, int(gerador.integers(1, 4)), seed=1000 + caso)
    chunk = int(gerador.integers(1, N // 2 + 1))
    razao = float(gerador.uniform(0.2, 0.8))

    config = ConfigPrefill(_plano_com_razao(L, razao), chunk, pontuador, modo)
    cache = executar_prefill_em_chunks(trace, config)
    assert len(cache.historico[0]) > 1
    for camada, orcamento in enumerate(cache.orcamentos):
        esperado = simulador_referencia(trace, camada, orcamento, chunk, pontuador, modo)
        assert cache.conjuntos[camada] == esperado


def test_replay_difere_do_conjunto_visivel():
    trace = gerar_trace_sintetico(1, 2, 40, 3, 3, seed=21)
    plano = _plano_com_razao(1, 0.7)
    visivel = executar_prefill_em_chunks(trace, ConfigPrefill(plano, 5))
    replay = executar_prefill_em_chunks(
        trace, ConfigPrefill(plano, 5, modo_atencao="replay_contexto_completo")
    )
    assert visivel.orcamentos == replay.orcamentos
    assert visivel.scores[0].sum() != pytest.approx(replay.scores[0].sum(), rel=1e-12)


@pytest.mark.parametrize("pontuador", ["h2o", "value_aware_l1", "value_aware_l2"])
def test_chunk_unico_equivale_ao_top_k_completo(pontuador):
    for seed in range(15):
        trace = gerar_trace_sintetico(2, 2, 24, 4, 3, seed=seed)
        plano = _plano_com_razao(2, 0.6)
        cache = executar_prefill_em_chunks(
            trace, ConfigPrefill(plano, tamanho_chunk=64, pontuador=pontuador)
        )
        for camada, orcamento in enumerate(cache.orcamentos):
            topk = selecionar_top_tokens(calcular_importancia(trace, camada, pontuador), orcamento)
            assert cache.conjuntos[camada] == topk.indices


def test_tokens_descartados_nao_voltam():
    trace = gerar_trace_sintetico(1, 2, 30, 3, 3, seed=9)
    cache = executar_prefill_em_chunks(
        trace, ConfigPrefill(_plano_com_razao(1, 0.7), tamanho_chunk=5)
    )
    historico = cache.historico[0]
    assert len(historico) == 6
    for k, (anterior, atual) in enumerate(zip(historico, historico[1:]), start=1):
        inicio_chunk = 5 * k
        assert all(j in anterior or j >= inicio_chunk for j in atual)
        assert len(atual) == cache.orcamentos[0]


def test_pegada():
    c = CabecalhoTrace(2, 1, 8, 3, 3)
    cache = CachePodado(((0, 1, 2, 3), (0, 1)), (np.zeros(4), np.zeros(2)), (4, 2), 8)
    assert pegada_memoria(cache, c) == 36
    vazio = CachePodado(((), ()), (np.zeros(0), np.zeros(0)), (0, 0), 8)
    assert pegada_memoria(vazio, c) == 0


def test_pegada_retencao_total():
    trace = gerar_trace_sintetico(3, 2, 9, 2, 4, seed=2)
    cache = executar_prefill_em_chunks(trace, ConfigPrefill(_plano_com_razao(3, 0.0), 4))
    assert pegada_memoria(cache, trace.cabecalho) == 3 * 9 * 2 * (2 + 4)


def test_relatorio():
    trace = gerar_trace_sintetico(2, 1, 10, 2, 2, seed=4)
    plano = plano_uniforme(2, 0.5)
    cache = executar_prefill_em_chunks(trace, ConfigPrefill(plano, 4))
    relatorio = relatorio_cache("uniform", cache, trace.cabecalho)
    assert relatorio["plan_name"] == "uniform"
    assert relatorio["seen_tokens"] == 10
    assert [c["budget"] for c in relatorio["per_layer"]] == [5, 5]
    resumo = relatorio["per_layer"][0]["score_summary"]
    assert resumo["min"] <= resumo["mean"] <= resumo["max"]


def test_comparacao_de_planos():
    trace = gerar_trace_sintetico(6, 2, 32, 3, 3, seed=12)
    metrica = np.linspace(0.0, 1.0, 6)
    planos = [plano_uniforme(6, 0.4), plano_mga(6, 0.4, metrica), plano_uniforme(6, 0.4)]
    comparacao = comparar_planos(trace, planos, tamanho_chunk=8, nomes=["u", "mga", "u2"])

    assert comparacao["footprints_equal"]
    u, mga, u2 = comparacao["plans"]
    assert [c["retained"] for c in u["per_layer"]] == [c["retained"] for c in u2["per_layer"]]
    assert 0.0 <= mga["mean_jaccard"] <= 1.0
    total = razoes_para_contagens(planos[0], 32).total
    assert u["footprint_entries"] == total * 2 * 6


def test_comparacao_exige_mesmo_rho():
    trace = gerar_trace_sintetico(4, 1, 8, 2, 2, seed=1)
    with pytest.raises(ErroDimensao):
        comparar_planos(trace, [plano_uniforme(4, 0.4), plano_uniforme(4, 0.5)])


def test_plano_com_l_diferente():
    trace = gerar_trace_sintetico(2, 1, 8, 2, 2, seed=1)
    with pytest.raises(ErroDimensao):
        executar_prefill_em_chunks(trace, ConfigPrefill(_plano_com_razao(3, 0.5)))


def test_config_invalida():
    with pytest.raises(ErroDimensao):
        ConfigPrefill(_plano_com_razao(2, 0.5), tamanho_chunk=0)
    with pytest.raises(ErroDimensao):
        ConfigPrefill(_plano_com_razao(2, 0.5), pontuador="outro")


def test_jaccard():
    assert jaccard((0, 1, 2), (1, 2, 3)) == 0.5
    assert jaccard((), ()) == 1.0

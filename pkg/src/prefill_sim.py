"""
Módulo de simulação de prefill em chunks com poda de KV por camada.

A cada chunk, os tokens novos atendem aos tokens ainda retidos e aos
antecessores do próprio chunk; a atenção recebida é somada ao score acumulado
de cada token e, no fim do chunk, cada camada mantém apenas os B^(l) tokens de
maior score. Tokens descartados nunca voltam ao cache.

Q/K/V de cada camada vêm do trace sem poda: a mudança nas representações das
camadas seguintes causada pela poda não é modelada.
"""

from dataclasses import dataclass, field

import numpy as np

from src.allocation import razoes_para_contagens
from src.config import PONTUADORES, TAMANHO_CHUNK_PADRAO
from src.errors import ErroDimensao
from src.importance import (
    atencao_recebida, calcular_importancia, normas_valor, ordem_top,
    pesos_agregados, selecionar_top_tokens
)


MODOS_ATENCAO = ("conjunto_visivel", "replay_contexto_completo")
_NORMA_POR_PONTUADOR = {"h2o": None, "value_aware_l1": 1, "value_aware_l2": 2}


@dataclass(frozen=True)
class ConfigPrefill:
    plano: object
    tamanho_chunk: int = TAMANHO_CHUNK_PADRAO
    pontuador: str = "h2o"
    modo_atencao: str = "conjunto_visivel"
    agregacao_valor: str = "vetor_medio"

    def __post_init__(self):
        if self.tamanho_chunk < 1:
            raise ErroDimensao("tamanho_chunk deve ser >= 1", campo="chunk_size")
        if self.pontuador not in PONTUADORES:
            raise ErroDimensao(f"Pontuador desconhecido: '{self.pontuador}'", campo="scorer")
        if self.modo_atencao not in MODOS_ATENCAO:
            raise ErroDimensao(f"Modo de atenção desconhecido: '{self.modo_atencao}'", campo="mode")


@dataclass(frozen=True, eq=False)
class CachePodado:
    conjuntos: tuple
    scores: tuple
    orcamentos: tuple
    tokens_vistos: int
    historico: tuple = field(default=(), repr=False)

    @property
    def entradas_kv(self):
        return tuple(len(s) for s in self.conjuntos)


def simular_camada(trace, camada, orcamento, config):
    """
    Simula o prefill em chunks de uma camada.

    Args:
        trace (TraceAtencao): Trace de atenção
        camada (int): Índice da camada
        orcamento (int): B^(l)
        config (ConfigPrefill): Configuração do prefill

    Returns:
        tuple: (índices retidos, scores dos retidos, conjuntos após cada chunk)
    """
    N = trace.cabecalho.tamanho_seq
    p_norm = _NORMA_POR_PONTUADOR[config.pontuador]
    normas = None if p_norm is None else normas_valor(trace, camada, p_norm, config.agregacao_valor)

    acumulado = np.zeros(N, dtype=np.float64)
    retidos = np.empty(0, dtype=np.int64)
    historico = []

    for inicio in range(0, N, config.tamanho_chunk):
        novos = np.arange(inicio, min(inicio + config.tamanho_chunk, N))
        candidatos = np.concatenate([retidos, novos])

        if config.modo_atencao == "conjunto_visivel":
            pesos = pesos_agregados(trace, camada, novos, candidatos)
            acumulado[candidatos] += atencao_recebida(pesos, novos, candidatos)
        else:
            contexto = np.arange(novos[-1] + 1)
            pesos = pesos_agregados(trace, camada, novos, contexto)
            acumulado[candidatos] += atencao_recebida(pesos, novos, contexto)[candidatos]

        score = acumulado[candidatos] if normas is None else acumulado[candidatos] * normas[candidatos]
        manter = ordem_top(score, min(orcamento, candidatos.size))
        retidos = candidatos[manter]
        historico.append(tuple(int(i) for i in retidos))

    score_final = acumulado[retidos] if normas is None else acumulado[retidos] * normas[retidos]
    return retidos, score_final, tuple(historico)


def executar_prefill_em_chunks(trace, config):
    """
    Executa o prefill em chunks em todas as camadas.

    Args:
        trace (TraceAtencao): Trace de atenção
        config (ConfigPrefill): Plano, tamanho do chunk e pontuador

    Returns:
        CachePodado: Conjuntos retidos por camada, scores e histórico

    Raises:
        ErroDimensao: Se o plano não tiver L camadas
    """
    cabecalho = trace.cabecalho
    if config.plano.num_camadas != cabecalho.num_camadas:
        raise ErroDimensao(
            f"Plano com {config.plano.num_camadas} camadas para trace com {cabecalho.num_camadas}",
            campo="plan"
        )

    contagens = razoes_para_contagens(config.plano, cabecalho.tamanho_seq)
    if max(contagens.contagens) > cabecalho.tamanho_seq:
        raise ErroDimensao("Budget de camada maior que N", campo="plan")

    conjuntos, scores, historicos = [], [], []
    for camada, orcamento in enumerate(contagens.contagens):
        retidos, score, historico = simular_camada(trace, camada, orcamento, config)
        conjuntos.append(tuple(int(i) for i in retidos))
        scores.append(score)
        historicos.append(historico)

    return CachePodado(
        conjuntos=tuple(conjuntos),
        scores=tuple(scores),
        orcamentos=contagens.contagens,
        tokens_vistos=cabecalho.tamanho_seq,
        historico=tuple(historicos)
    )


def pegada_memoria(cache, cabecalho):
    """
    Número de escalares armazenados: sum_l |S^(l)| · H · (d_k + d_v).

    Args:
        cache (CachePodado): Cache podado
        cabecalho (CabecalhoTrace): Cabeçalho do trace

    Returns:
        int: Entradas de KV armazenadas
    """
    por_token = cabecalho.num_cabecas * (cabecalho.dim_chave + cabecalho.dim_valor)
    return sum(len(s) for s in cache.conjuntos) * por_token


def relatorio_cache(nome_plano, cache, cabecalho):
    """
    Relatório JSON de um cache: {plan_name, per_layer, footprint_entries, seen_tokens}.
    """
    por_camada = []
    for camada, (conjunto, score) in enumerate(zip(cache.conjuntos, cache.scores)):
        resumo = {"min": 0.0, "max": 0.0, "mean": 0.0}
        if len(score):
            resumo = {
                "min": float(np.min(score)),
                "max": float(np.max(score)),
                "mean": float(np.mean(score))
            }
        por_camada.append({
            "layer": camada,
            "budget": int(cache.orcamentos[camada]),
            "retained": list(conjunto),
            "score_summary": resumo
        })

    return {
        "plan_name": nome_plano,
        "per_layer": por_camada,
        "footprint_entries": pegada_memoria(cache, cabecalho),
        "seen_tokens": cache.tokens_vistos
    }


def jaccard(a, b):
    """Índice de Jaccard entre dois conjuntos de índices (1 se ambos vazios)."""
    a, b = set(a), set(b)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def comparar_planos(trace, planos, tamanho_chunk=TAMANHO_CHUNK_PADRAO, pontuador="h2o",
                    modo_atencao="conjunto_visivel", nomes=None, verbose=False):
    """
    Roda o prefill para cada plano e compara conjuntos, pegadas e a sobreposição
    com o top-k calculado sobre a sequência inteira (mesmo budget por camada).

    Args:
        trace (TraceAtencao): Trace de atenção
        planos (list): Planos com mesmo L e mesmo rho global
        tamanho_chunk (int): Tamanho do chunk
        pontuador (str): Pontuador de importância
        modo_atencao (str): 'conjunto_visivel' ou 'replay_contexto_completo'
        nomes (list): Nomes dos planos (padrão: estratégia de cada plano)
        verbose (bool): Imprime o progresso no console

    Returns:
        dict: {"plans": [...], "footprints_equal": bool}
    """
    if not planos:
        raise ErroDimensao("Nenhum plano para comparar", campo="plans")
    referencia = planos[0]
    for plano in planos:
        if plano.num_camadas != referencia.num_camadas or abs(plano.rho - referencia.rho) > 1e-9:
            raise ErroDimensao(
                f"Plano '{plano.estrategia}' difere em L ou rho do plano '{referencia.estrategia}'",
                campo="plans"
            )

    nomes = nomes or [plano.estrategia for plano in planos]
    importancias = {}
    resultados = []

    for nome, plano in zip(nomes, planos):
        if verbose:
            print(f"  Simulando plano: {nome}")
        config = ConfigPrefill(plano, tamanho_chunk, pontuador, modo_atencao)
        cache = executar_prefill_em_chunks(trace, config)

        sobreposicoes = []
        for camada, conjunto in enumerate(cache.conjuntos):
            if camada not in importancias:
                importancias[camada] = calcular_importancia(trace, camada, pontuador)
            topk = selecionar_top_tokens(importancias[camada], cache.orcamentos[camada])
            sobreposicoes.append(jaccard(conjunto, topk.indices))

        relatorio = relatorio_cache(nome, cache, trace.cabecalho)
        relatorio["jaccard_vs_full_topk"] = sobreposicoes
        relatorio["mean_jaccard"] = float(np.mean(sobreposicoes))
        resultados.append(relatorio)

        if verbose:
            print(f"  OK {nome}: {relatorio['footprint_entries']} entradas, "
                  f"Jaccard médio {relatorio['mean_jaccard']:.3f}")

    pegadas = {r["footprint_entries"] for r in resultados}
    return {"plans": resultados, "footprints_equal": len(pegadas) == 1}

"""
Script do experimento completo na configuração de referência.
Gera o trace (L=32, H=4, N=2048), deriva a curva de InfoNCE por camada a
partir de snapshots sintéticos, monta os planos uniforme / MGA / MLP /
MLMA-{2,4,6} com rho = 0.6 e compara todos no prefill em chunks de 1024.

Uso:
    python experimento_completo.py            (configuração de referência)
    python experimento_completo.py --fast     (configuração reduzida, para testes)
    python experimento_completo.py --rho-max 0.8
"""

import argparse
import sys
import time
from pathlib import Path

from src.allocation import (
    plano_mga, plano_mlma, plano_mlp, plano_para_dict, plano_uniforme, razoes_para_contagens
)
from src.config import (
    ESTAGIOS, RHO_MAX_PADRAO, RHO_PADRAO, TAMANHO_CHUNK_PADRAO, carregar_configuracao
)
from src.errors import ErroDepthKV, ErroEntradaSaida, ErroOrcamentoInviavel
from src.output import salvar_json, salvar_relatorio_metricas
from src.prefill_sim import comparar_planos
from src.rep_metrics import (
    ConfigMetricas, calcular_relatorio_metricas, metrica_por_camada, montar_pares_perturbados
)
from src.trace import gerar_snapshot_sintetico, gerar_trace_sintetico, salvar_trace
from src import rng


CONFIG_REFERENCIA = {
    "num_camadas": 32, "num_cabecas": 4, "tamanho_seq": 2048, "dim_chave": 16,
    "tamanho_chunk": TAMANHO_CHUNK_PADRAO, "samples": 8, "tamanho_snapshot": 32,
    "dim_oculta": 16, "reamostragens": 1000
}
CONFIG_RAPIDA = {
    "num_camadas": 8, "num_cabecas": 2, "tamanho_seq": 256, "dim_chave": 8,
    "tamanho_chunk": 128, "samples": 4, "tamanho_snapshot": 16,
    "dim_oculta": 8, "reamostragens": 200
}


def montar_planos(num_camadas, rho, rho_max, metrica):
    """
    Monta os seis planos da comparação; planos inviáveis são registrados.

    Args:
        num_camadas (int): L
        rho (float): Razão global
        rho_max (float): Teto por camada do MGA/MLMA
        metrica (np.ndarray): InfoNCE por camada

    Returns:
        tuple: (planos viáveis, nomes, lista de inviáveis)
    """
    construtores = [
        ("uniform", lambda: plano_uniforme(num_camadas, rho)),
        ("mga", lambda: plano_mga(num_camadas, rho, metrica, rho_max)),
        ("mlp", lambda: plano_mlp(num_camadas, rho)),
        ("mlma-2", lambda: plano_mlma(num_camadas, rho, metrica, 2, rho_max)),
        ("mlma-4", lambda: plano_mlma(num_camadas, rho, metrica, 4, rho_max)),
        ("mlma-6", lambda: plano_mlma(num_camadas, rho, metrica, 6, rho_max)),
    ]

    planos, nomes, inviaveis = [], [], []
    for nome, construir in construtores:
        try:
            planos.append(construir())
            nomes.append(nome)
            print(f"  OK {nome}: razão máxima {planos[-1].razoes.max():.4f}")
        except ErroOrcamentoInviavel as e:
            inviaveis.append({"strategy": nome, "message": e.mensagem})
            print(f"  AVISO {nome} inviável: {e.mensagem}")
    return planos, nomes, inviaveis


def executar_experimento(cfg, rho, rho_max, seed, pasta):
    """
    Executa o pipeline completo e grava os artefatos em `pasta`.

    Args:
        cfg (dict): Tamanhos do experimento
        rho (float): Razão global
        rho_max (float): Teto por camada
        seed (int): Semente principal
        pasta (Path): Pasta de saída

    Returns:
        dict: Comparação dos planos (com a chave 'infeasible')
    """
    inicio = time.time()
    L = cfg["num_camadas"]

    # ETAPA 1: Trace
    print(f"\n{'=' * 70}")
    print("[ETAPA 1] Geração do trace")
    print("-" * 70)
    trace = gerar_trace_sintetico(
        L, cfg["num_cabecas"], cfg["tamanho_seq"], cfg["dim_chave"], cfg["dim_chave"],
        rng.derivar_seed(seed, 0)
    )
    caminho_trace = salvar_trace(trace, pasta / "trace.dkvt")
    print(f"OK Trace: L={L}, H={cfg['num_cabecas']}, N={cfg['tamanho_seq']} -> {caminho_trace}")

    # ETAPA 2: Métrica por camada
    print(f"\n{'=' * 70}")
    print("[ETAPA 2] Métricas de representação (InfoNCE por camada)")
    print("-" * 70)
    originais = [
        gerar_snapshot_sintetico(
            L, ESTAGIOS, cfg["tamanho_snapshot"], cfg["dim_oculta"], rng.derivar_seed(seed, 1 + i)
        )
        for i in range(cfg["samples"])
    ]
    config_metricas = ConfigMetricas(reamostragens_bootstrap=cfg["reamostragens"])
    pares = montar_pares_perturbados(originais, config_metricas.prob_dropout, seed)
    relatorio = calcular_relatorio_metricas(pares, config_metricas, seed)
    salvar_relatorio_metricas(relatorio, pasta / "metrics.csv")
    metrica = metrica_por_camada(relatorio, "infonce", "post-attention")
    print(f"OK {cfg['samples']} samples, InfoNCE em [{metrica.min():.4f}, {metrica.max():.4f}]")

    # ETAPA 3: Planos
    print(f"\n{'=' * 70}")
    print(f"[ETAPA 3] Planos de budget (rho={rho}, rho_max={rho_max})")
    print("-" * 70)
    planos, nomes, inviaveis = montar_planos(L, rho, rho_max, metrica)
    if not planos:
        raise ErroOrcamentoInviavel("Nenhum plano viável", campo="rho")
    salvar_json(
        [plano_para_dict(p, razoes_para_contagens(p, cfg["tamanho_seq"])) for p in planos],
        pasta / "plans.json"
    )

    # ETAPA 4: Prefill
    print(f"\n{'=' * 70}")
    print(f"[ETAPA 4] Prefill em chunks de {cfg['tamanho_chunk']}")
    print("-" * 70)
    comparacao = comparar_planos(
        trace, planos, cfg["tamanho_chunk"], nomes=nomes, verbose=True
    )
    comparacao["infeasible"] = inviaveis
    salvar_json(comparacao, pasta / "compare.json")

    # Resumo
    print(f"\n{'=' * 70}")
    print("OK EXPERIMENTO CONCLUÍDO")
    print(f"{'=' * 70}")
    for resultado in comparacao["plans"]:
        print(f"OK {resultado['plan_name']:<8} entradas={resultado['footprint_entries']} "
              f"jaccard={resultado['mean_jaccard']:.3f}")
    for item in inviaveis:
        print(f"AVISO {item['strategy']:<8} inviável")
    print(f"OK Pegadas idênticas: {comparacao['footprints_equal']}")
    print(f"OK Tempo total: {time.time() - inicio:.1f}s")
    print(f"{'=' * 70}")

    return comparacao


def main(argv=None):
    """
    Função principal.

    Returns:
        int: Código de saída
    """
    parser = argparse.ArgumentParser(description="Experimento completo de poda por camada")
    parser.add_argument("--fast", action="store_true", help="Configuração reduzida")
    parser.add_argument("--rho", type=float, default=RHO_PADRAO)
    parser.add_argument("--rho-max", type=float, default=RHO_MAX_PADRAO)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", type=Path, default=None)
    args = parser.parse_args(argv)

    try:
        configuracao = carregar_configuracao()
        seed = configuracao["seed"] if args.seed is None else args.seed
        pasta = args.out or configuracao["output_dir"] / "experimento"

        print("=" * 70)
        print("EXPERIMENTO COMPLETO - PODA DE KV POR CAMADA")
        print("=" * 70)
        if args.fast:
            print("\n*** MODO RÁPIDO ATIVADO ***")
        cfg = CONFIG_RAPIDA if args.fast else CONFIG_REFERENCIA

        executar_experimento(cfg, args.rho, args.rho_max, seed, pasta)
        return 0

    except ErroDepthKV as e:
        print(f"\nERRO: {e.mensagem}")
        return e.codigo_saida

    except OSError as e:
        print(f"\nERRO: Falha de leitura/escrita: {e}")
        return ErroEntradaSaida.codigo_saida


if __name__ == "__main__":
    sys.exit(main())

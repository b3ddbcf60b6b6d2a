"""
Script principal do toolkit de poda de KV cache por camada.
Interpreta os subcomandos, despacha para os módulos de src/ e grava os
artefatos (JSON/CSV/binário) na pasta de saída.

Exemplos:
    python main.py gen-trace --layers 32 --heads 4 --seq-len 2048 --key-dim 64 --seed 7
    python main.py allocate --strategy mga --layers 5 --rho 0.56 --metric m.csv
    python main.py prune-sim --trace output/trace.dkvt --plan output/plan.json
    python main.py stats perm --table t.csv --n-perm 10000 --seed 1
"""

import argparse
import json
import re
import sys
from pathlib import Path

import pandas as pd

from src.allocation import (
    plano_ablacao_camada, plano_de_dict, plano_mga, plano_mlma, plano_mlp,
    plano_para_dict, plano_uniforme, razoes_para_contagens
)
from src.config import (
    ALPHA_BOOTSTRAP_PADRAO, ESTAGIOS, KNN_K_PADRAO, N_PERM_PADRAO, PONTUADORES,
    PROB_DROPOUT_PADRAO, REAMOSTRAGENS_BOOTSTRAP_PADRAO, RHO_MAX_PADRAO, RHO_PADRAO,
    TAMANHO_CHUNK_PADRAO, TAU_PADRAO, carregar_configuracao
)
from src.errors import (
    ErroArquivo, ErroConfiguracao, ErroDepthKV, ErroEntradaSaida, ErroOrcamentoInviavel
)
from src.importance import calcular_importancia, selecionar_top_tokens
from src.output import (
    COLUNAS_RELATORIO, carregar_json, carregar_relatorio_metricas, exibir_resumo_plano,
    exibir_resumo_prefill, salvar_conjunto_json, salvar_csv, salvar_json,
    salvar_relatorio_metricas, salvar_scores_csv
)
from src.prefill_sim import (
    ConfigPrefill, comparar_planos, executar_prefill_em_chunks, relatorio_cache
)
from src.rep_metrics import (
    MODOS_DENOMINADOR, METRICAS, ConfigMetricas, calcular_relatorio_metricas,
    metrica_por_camada, montar_pares_perturbados
)
from src.stats import (
    correlacao_por_camada, correlacionar_metricas_com_queda,
    queda_desempenho, teste_permutacao, yapscore_tabela, zscore
)
from src.trace import (
    carregar_snapshot, carregar_tabela_scores, carregar_trace, gerar_snapshot_sintetico,
    gerar_trace_sintetico, salvar_tabela_scores, salvar_trace
)
from src import rng


ESTRATEGIAS = ("uniform", "mlp", "mga", "mlma", "ablation")
ESTRATEGIAS_COMPARACAO = ("uniform", "mga", "mlp", "mlma-2", "mlma-4", "mlma-6")
TRANSFORMACOES = {"shift": "deslocamento_minimo", "rank": "posto"}
MODOS_PREFILL = {"visible": "conjunto_visivel", "replay": "replay_contexto_completo"}
ESQUEMAS = {"per-sample": "por_amostra", "global": "global"}
_FLAG_NA_MENSAGEM = re.compile(
    r"argument (\S+?):|arguments are required: (\S+?)(?:,|$)|unrecognized arguments: (\S+)"
)


class ParserDepthKV(argparse.ArgumentParser):
    """ArgumentParser que levanta ErroConfiguracao em vez de encerrar o processo."""

    def error(self, message):
        campo = None
        encontrado = _FLAG_NA_MENSAGEM.search(message)
        if encontrado:
            flag = next(g for g in encontrado.groups() if g)
            campo = flag.split("/")[0]
        raise ErroConfiguracao(message, campo=campo)


class Console:
    """Saída de progresso no estilo do pipeline (silenciada por --quiet)."""

    def __init__(self, quiet=False):
        self.quiet = quiet

    def __call__(self, texto=""):
        if not self.quiet:
            print(texto)

    def banner(self, titulo):
        self("=" * 70)
        self(titulo)
        self("=" * 70)

    def etapa(self, numero, titulo):
        self(f"\n[ETAPA {numero}] {titulo}")
        self("-" * 70)


# =============================================================================
# Parser
# =============================================================================

def _opcoes_comuns():
    comum = argparse.ArgumentParser(add_help=False)
    comum.add_argument("--out", type=Path, default=None,
                       help="Pasta de saída (padrão: DEPTHKV_OUTPUT_DIR ou output/)")
    comum.add_argument("--format", choices=("json", "csv"), default=None,
                       help="Formato dos relatórios")
    comum.add_argument("--seed", type=int, default=None,
                       help="Semente (padrão: DEPTHKV_SEED ou 0)")
    comum.add_argument("--quiet", action="store_true", help="Suprime o progresso no console")
    return comum


def _opcoes_orcamento(parser):
    parser.add_argument("--rho", type=float, default=RHO_PADRAO)
    parser.add_argument("--rho-max", type=float, default=RHO_MAX_PADRAO)
    parser.add_argument("--metric", type=Path, default=None,
                        help="CSV da métrica por camada (tabela ou relatório de métricas)")
    parser.add_argument("--metric-name", choices=METRICAS, default="infonce")
    parser.add_argument("--stage", choices=ESTAGIOS, default="post-attention")
    parser.add_argument("--transform", choices=tuple(TRANSFORMACOES), default="shift")


def criar_parser():
    """
    Monta o parser com todos os subcomandos.

    Returns:
        ParserDepthKV: Parser configurado
    """
    comum = _opcoes_comuns()
    parser = ParserDepthKV(prog="depthkv", description="Poda de KV cache por camada")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=ParserDepthKV)

    p = sub.add_parser("gen-trace", parents=[comum], help="Gera um trace sintético")
    p.add_argument("--layers", type=int, required=True)
    p.add_argument("--heads", type=int, required=True)
    p.add_argument("--seq-len", type=int, required=True)
    p.add_argument("--key-dim", type=int, required=True)
    p.add_argument("--value-dim", type=int, default=None, help="Padrão: --key-dim")

    p = sub.add_parser("importance", parents=[comum], help="Scores de importância por token")
    p.add_argument("--trace", type=Path, required=True)
    p.add_argument("--layer", type=int, default=None, help="Padrão: todas as camadas")
    p.add_argument("--scorer", choices=PONTUADORES, default="h2o")
    p.add_argument("--budget", type=int, default=None, help="Seleciona o top-B de cada camada")

    p = sub.add_parser("allocate", parents=[comum], help="Calcula um plano de budget")
    p.add_argument("--strategy", choices=ESTRATEGIAS, required=True)
    p.add_argument("--layers", type=int, required=True)
    p.add_argument("--middle", type=int, choices=(2, 4, 6), default=2)
    p.add_argument("--seq-len", type=int, default=None, help="Converte razões em budgets inteiros")
    p.add_argument("--protect-first", action="store_true", help="Uniforme sem podar a camada 0")
    p.add_argument("--ablate-layer", type=int, default=None)
    _opcoes_orcamento(p)

    p = sub.add_parser("prune-sim", parents=[comum], help="Simula o prefill em chunks")
    p.add_argument("--trace", type=Path, required=True)
    p.add_argument("--plan", type=Path, required=True)
    p.add_argument("--chunk-size", type=int, default=TAMANHO_CHUNK_PADRAO)
    p.add_argument("--scorer", choices=PONTUADORES, default="h2o")
    p.add_argument("--mode", choices=tuple(MODOS_PREFILL), default="visible")

    p = sub.add_parser("metrics", parents=[comum], help="Métricas de representação por camada")
    p.add_argument("--snapshots", type=Path, nargs="*", default=[],
                   help="Snapshots originais (.dkvr)")
    p.add_argument("--gen-samples", type=int, default=None,
                   help="Gera n snapshots sintéticos em vez de ler arquivos")
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--seq-len", type=int, default=32)
    p.add_argument("--hidden-dim", type=int, default=16)
    p.add_argument("--knn-k", type=int, default=KNN_K_PADRAO)
    p.add_argument("--tau", type=float, default=TAU_PADRAO)
    p.add_argument("--drop-prob", type=float, default=PROB_DROPOUT_PADRAO)
    p.add_argument("--bootstrap", type=int, default=REAMOSTRAGENS_BOOTSTRAP_PADRAO)
    p.add_argument("--alpha", type=float, default=ALPHA_BOOTSTRAP_PADRAO)
    p.add_argument("--denominator", choices=MODOS_DENOMINADOR, default="standard")

    p = sub.add_parser("stats", parents=[comum], help="Testes estatísticos")
    p.add_argument("action", choices=("perm", "corr", "yap", "zscore", "drop-corr"))
    p.add_argument("--table", type=Path, default=None)
    p.add_argument("--table-y", type=Path, default=None)
    p.add_argument("--report", type=Path, default=None, help="Relatório de métricas (drop-corr)")
    p.add_argument("--baseline", type=float, default=None)
    p.add_argument("--n-perm", type=int, default=N_PERM_PADRAO)
    p.add_argument("--scheme", choices=tuple(ESQUEMAS), default="per-sample")
    p.add_argument("--method", choices=("pearson", "spearman"), default=None)

    p = sub.add_parser("compare", parents=[comum], help="Compara planos no mesmo trace")
    p.add_argument("--trace", type=Path, required=True)
    p.add_argument("--strategies", nargs="+", choices=ESTRATEGIAS_COMPARACAO,
                   default=list(ESTRATEGIAS_COMPARACAO))
    p.add_argument("--chunk-size", type=int, default=TAMANHO_CHUNK_PADRAO)
    p.add_argument("--scorer", choices=PONTUADORES, default="h2o")
    p.add_argument("--mode", choices=tuple(MODOS_PREFILL), default="visible")
    _opcoes_orcamento(p)

    return parser


# =============================================================================
# Auxiliares
# =============================================================================

def _exigir(valor, flag):
    if valor is None:
        raise ErroConfiguracao(f"A flag {flag} é obrigatória neste comando", campo=flag)
    return valor


def carregar_metrica_camadas(path, metrica="infonce", estagio="post-attention"):
    """
    Lê a métrica por camada usada pelo MGA/MLMA. Aceita um relatório de métricas
    (colunas layer, stage, metric, ...) ou uma tabela com uma coluna por camada,
    cuja média por coluna é usada.

    Args:
        path (Path): CSV de entrada
        metrica (str): Métrica do relatório
        estagio (str): Estágio do relatório

    Returns:
        np.ndarray: Um valor por camada
    """
    path = Path(path)
    if not path.exists():
        raise ErroArquivo(f"Arquivo de métrica não encontrado: {path}", campo=str(path))

    colunas = list(pd.read_csv(path, nrows=0).columns)
    if all(c in colunas for c in COLUNAS_RELATORIO):
        return metrica_por_camada(carregar_relatorio_metricas(path), metrica, estagio)
    return carregar_tabela_scores(path).valores.mean(axis=0)


def _metrica_para(args, estrategia):
    if args.metric is None:
        raise ErroConfiguracao(f"A estratégia '{estrategia}' exige --metric", campo="--metric")
    return carregar_metrica_camadas(args.metric, args.metric_name, args.stage)


def construir_plano(estrategia, num_camadas, args, metrica=None):
    """
    Constrói o plano de uma estratégia a partir das flags.

    Args:
        estrategia (str): uniform, mlp, mga, mlma-<m>, mlma ou ablation
        num_camadas (int): L
        args (argparse.Namespace): Flags do comando
        metrica (np.ndarray): Métrica por camada já carregada (opcional)

    Returns:
        PlanoOrcamento: Plano
    """
    transformacao = TRANSFORMACOES[args.transform]
    if estrategia == "uniform":
        return plano_uniforme(num_camadas, args.rho, getattr(args, "protect_first", False))
    if estrategia == "mlp":
        return plano_mlp(num_camadas, args.rho)
    if estrategia == "ablation":
        camada = _exigir(args.ablate_layer, "--ablate-layer")
        return plano_ablacao_camada(num_camadas, camada, args.rho)

    if metrica is None:
        metrica = _metrica_para(args, estrategia)
    if estrategia == "mga":
        return plano_mga(num_camadas, args.rho, metrica, args.rho_max, transformacao)

    camadas_meio = int(estrategia.split("-")[1]) if "-" in estrategia else args.middle
    return plano_mlma(num_camadas, args.rho, metrica, camadas_meio, args.rho_max, transformacao)


# =============================================================================
# Comandos
# =============================================================================

def comando_gen_trace(args, pasta, console):
    console.etapa(1, "Geração de trace sintético")
    trace = gerar_trace_sintetico(
        args.layers, args.heads, args.seq_len, args.key_dim,
        args.value_dim or args.key_dim, args.seed
    )
    caminho = salvar_trace(trace, pasta / "trace.dkvt")
    console(f"OK Trace salvo: {caminho}")
    return [caminho]


def comando_importance(args, pasta, console, formato):
    console.etapa(1, f"Importância ({args.scorer})")
    trace = carregar_trace(args.trace)
    camadas = range(trace.cabecalho.num_camadas) if args.layer is None else [args.layer]

    artefatos, camadas_json = [], []
    for camada in camadas:
        scores = calcular_importancia(trace, camada, args.scorer)
        retidos = None if args.budget is None else selecionar_top_tokens(scores, args.budget)

        if formato == "csv":
            artefatos.append(salvar_scores_csv(scores, pasta / f"scores_layer{camada}.csv"))
            if retidos is not None:
                artefatos.append(salvar_conjunto_json(retidos, pasta / f"retained_layer{camada}.json"))
        else:
            camadas_json.append({
                "layer": camada,
                "scores": [float(s) for s in scores.scores],
                "retained": None if retidos is None else list(retidos.indices)
            })
        console(f"OK Camada {camada}: {scores.scores.size} scores")

    if formato == "json":
        artefatos.append(salvar_json(
            {"scorer": args.scorer, "layers": camadas_json}, pasta / "importance.json"
        ))
    return artefatos


def comando_allocate(args, pasta, console, formato):
    console.etapa(1, f"Plano de budget ({args.strategy})")
    plano = construir_plano(args.strategy, args.layers, args)
    contagens = None if args.seq_len is None else razoes_para_contagens(plano, args.seq_len)
    if not console.quiet:
        exibir_resumo_plano(plano, contagens)

    if formato == "csv":
        linhas = [
            {
                "layer": l,
                "ratio": float(plano.razoes[l]),
                "count": None if contagens is None else contagens.contagens[l],
                "protected": l in plano.protegidas
            }
            for l in range(plano.num_camadas)
        ]
        return [salvar_csv(linhas, pasta / "plan.csv", ["layer", "ratio", "count", "protected"])]
    return [salvar_json(plano_para_dict(plano, contagens), pasta / "plan.json")]


def comando_prune_sim(args, pasta, console, formato):
    console.etapa(1, "Simulação de prefill em chunks")
    trace = carregar_trace(args.trace)
    plano = plano_de_dict(carregar_json(args.plan))
    config = ConfigPrefill(plano, args.chunk_size, args.scorer, MODOS_PREFILL[args.mode])
    cache = executar_prefill_em_chunks(trace, config)
    relatorio = relatorio_cache(plano.estrategia, cache, trace.cabecalho)
    if not console.quiet:
        exibir_resumo_prefill(relatorio)

    if formato == "csv":
        linhas = [
            {
                "layer": c["layer"],
                "budget": c["budget"],
                "retained_count": len(c["retained"]),
                "retained": " ".join(str(i) for i in c["retained"])
            }
            for c in relatorio["per_layer"]
        ]
        return [salvar_csv(linhas, pasta / "prune_sim.csv")]
    return [salvar_json(relatorio, pasta / "prune_sim.json")]


def _originais_para_metricas(args, console):
    if args.snapshots:
        originais = [carregar_snapshot(p) for p in args.snapshots]
        console(f"OK {len(originais)} snapshot(s) carregado(s)")
        return originais

    n = _exigir(args.gen_samples, "--gen-samples")
    originais = [
        gerar_snapshot_sintetico(
            args.layers, ESTAGIOS, args.seq_len, args.hidden_dim, rng.derivar_seed(args.seed, i)
        )
        for i in range(n)
    ]
    console(f"OK {n} snapshot(s) sintético(s) gerado(s)")
    return originais


def comando_metrics(args, pasta, console, formato):
    console.etapa(1, "Snapshots de representação")
    originais = _originais_para_metricas(args, console)
    config = ConfigMetricas(
        knn_k=args.knn_k,
        tau=args.tau,
        prob_dropout=args.drop_prob,
        reamostragens_bootstrap=args.bootstrap,
        alpha_bootstrap=args.alpha,
        modo_denominador=args.denominator
    )

    console.etapa(2, "Métricas por camada e estágio")
    pares = montar_pares_perturbados(originais, config.prob_dropout, args.seed)
    relatorio = calcular_relatorio_metricas(pares, config, args.seed)
    console(f"OK {len(relatorio.linhas)} linhas no relatório")

    if formato == "json":
        return [salvar_json(list(relatorio.linhas), pasta / "metrics.json")]
    return [salvar_relatorio_metricas(relatorio, pasta / "metrics.csv")]


def _salvar_resultado(dados, pasta, nome, formato):
    if formato == "csv":
        linhas = dados if isinstance(dados, list) else [dados]
        return [salvar_csv(linhas, pasta / f"{nome}.csv")]
    return [salvar_json(dados, pasta / f"{nome}.json")]


def comando_stats(args, pasta, console, formato):
    console.etapa(1, f"Estatística ({args.action})")

    if args.action == "drop-corr":
        relatorio = carregar_relatorio_metricas(_exigir(args.report, "--report"))
        desempenho = carregar_tabela_scores(_exigir(args.table, "--table"))
        quedas = queda_desempenho(desempenho, _exigir(args.baseline, "--baseline"))
        linhas = correlacionar_metricas_com_queda(
            relatorio, quedas.valores.mean(axis=0), args.method or "spearman"
        )
        significativas = sum(1 for l in linhas if l["significant"])
        console(f"OK {significativas}/{len(linhas)} correlações com p < 0.05")
        return _salvar_resultado(linhas, pasta, "drop_corr", formato)

    tabela = carregar_tabela_scores(_exigir(args.table, "--table"))

    if args.action == "perm":
        resultado = teste_permutacao(tabela, args.n_perm, args.seed, ESQUEMAS[args.scheme])
        console(f"OK Estatística: {resultado.estatistica_observada:.6g}")
        console(f"OK p-valor: {resultado.p_valor:.6g}")
        return _salvar_resultado(resultado.para_dict(), pasta, "perm", formato)

    if args.action == "corr":
        tabela_y = carregar_tabela_scores(_exigir(args.table_y, "--table-y"))
        resultado = correlacao_por_camada(tabela, tabela_y, args.method or "pearson")
        console(f"OK r = {resultado.coeficiente:.6g} (p = {resultado.p_valor:.6g})")
        return _salvar_resultado(resultado.para_dict(), pasta, "corr", formato)

    if args.action == "yap":
        baseline = _exigir(args.baseline, "--baseline")
        yap = yapscore_tabela(tabela, baseline)
        console(f"OK YapScore médio: {float(yap.valores.mean()):.4f}")
        if formato == "json":
            return [salvar_json(
                {"baseline": baseline, "layers": list(yap.rotulos_camadas),
                 "values": yap.valores.tolist()},
                pasta / "yap.json"
            )]
        return [salvar_tabela_scores(yap, pasta / "yap.csv")]

    medias = tabela.valores.mean(axis=0)
    padronizados = zscore(medias)
    linhas = [
        {"layer": rotulo, "mean": float(m), "zscore": float(z)}
        for rotulo, m, z in zip(tabela.rotulos_camadas, medias, padronizados)
    ]
    return _salvar_resultado(linhas, pasta, "zscore", formato)


def comando_compare(args, pasta, console, formato):
    console.etapa(1, "Carregamento do trace")
    trace = carregar_trace(args.trace)
    L = trace.cabecalho.num_camadas
    console(f"OK L={L}, H={trace.cabecalho.num_cabecas}, N={trace.cabecalho.tamanho_seq}")

    console.etapa(2, "Planos de budget")
    metrica = None
    if any(e.startswith(("mga", "mlma")) for e in args.strategies):
        metrica = _metrica_para(args, "mga/mlma")

    planos, nomes, inviaveis = [], [], []
    for estrategia in args.strategies:
        try:
            planos.append(construir_plano(estrategia, L, args, metrica))
            nomes.append(estrategia)
            console(f"OK {estrategia}")
        except ErroOrcamentoInviavel as e:
            inviaveis.append({"strategy": estrategia, "message": e.mensagem})
            console(f"AVISO {estrategia} inviável: {e.mensagem}")

    if not planos:
        raise ErroOrcamentoInviavel("Nenhum plano viável para comparar", campo="--strategies")

    console.etapa(3, "Simulação de prefill")
    comparacao = comparar_planos(
        trace, planos, args.chunk_size, args.scorer, MODOS_PREFILL[args.mode],
        nomes=nomes, verbose=not console.quiet
    )
    comparacao["infeasible"] = inviaveis

    if formato == "csv":
        linhas = [
            {
                "plan_name": r["plan_name"],
                "footprint_entries": r["footprint_entries"],
                "mean_jaccard": r["mean_jaccard"]
            }
            for r in comparacao["plans"]
        ]
        return [salvar_csv(linhas, pasta / "compare.csv")]
    return [salvar_json(comparacao, pasta / "compare.json")]


_FORMATO_PADRAO = {
    "gen-trace": None, "importance": "csv", "allocate": "json", "prune-sim": "json",
    "metrics": "csv", "stats": "json", "compare": "json"
}


def _formato_padrao(args):
    # YapScores são uma tabela de scores, gravada em CSV como as tabelas de entrada
    if args.command == "stats" and args.action == "yap":
        return "csv"
    return _FORMATO_PADRAO[args.command]


def executar(args):
    """
    Executa um comando já interpretado (RunConfig = argparse.Namespace).

    Args:
        args (argparse.Namespace): Flags do comando

    Returns:
        list: Caminhos dos artefatos gravados

    Raises:
        ErroDepthKV: Em qualquer falha de configuração, formato ou dimensão
    """
    configuracao = carregar_configuracao()
    if args.seed is None:
        args.seed = configuracao["seed"]
    if args.seed < 0:
        raise ErroConfiguracao("--seed deve ser não negativa", campo="--seed")
    # na ablação, --rho é a razão da camada podada e pode chegar a 1
    rho_global = hasattr(args, "rho") and getattr(args, "strategy", None) != "ablation"
    if rho_global and not 0.0 <= args.rho < 1.0:
        raise ErroConfiguracao(f"--rho deve estar em [0, 1) (recebido {args.rho})", campo="--rho")

    pasta = args.out or configuracao["output_dir"]
    formato = args.format or _formato_padrao(args)
    console = Console(args.quiet)
    console.banner(f"DEPTHKV - {args.command.upper()}")

    if args.command == "gen-trace":
        artefatos = comando_gen_trace(args, pasta, console)
    else:
        comandos = {
            "importance": comando_importance,
            "allocate": comando_allocate,
            "prune-sim": comando_prune_sim,
            "metrics": comando_metrics,
            "stats": comando_stats,
            "compare": comando_compare,
        }
        artefatos = comandos[args.command](args, pasta, console, formato)

    console(f"\n{'=' * 70}")
    for caminho in artefatos:
        console(f"OK Artefato: {caminho}")
    console("=" * 70)
    return artefatos


def _emitir_erro(erro):
    print(f"\nERRO: {erro.mensagem}", file=sys.stderr)
    print(json.dumps(erro.para_dict(), ensure_ascii=False), file=sys.stderr)
    return erro.codigo_saida


def main(argv=None):
    """
    Ponto de entrada do CLI.

    Args:
        argv (list): Argumentos (padrão: sys.argv[1:])

    Returns:
        int: Código de saída (0 ok, 2 flags, 3 orçamento, 4 formato, 5 dimensão,
            6 arquivo ausente, 7 falha de leitura/escrita)
    """
    try:
        args = criar_parser().parse_args(argv)
        executar(args)
        return 0
    except ErroDepthKV as e:
        return _emitir_erro(e)
    except OSError as e:
        campo = None if e.filename is None else str(e.filename)
        classe = ErroArquivo if isinstance(e, FileNotFoundError) else ErroEntradaSaida
        return _emitir_erro(classe(str(e), campo=campo))


if __name__ == "__main__":
    sys.exit(main())

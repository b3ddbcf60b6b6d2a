"""
Módulo para salvamento e exibição de artefatos (JSON / CSV).
Todos os artefatos são determinísticos: mesma entrada, mesmos bytes.
"""

import json
from pathlib import Path

import pandas as pd

from src.errors import ErroArquivo, ErroTabelaInvalida
from src.rep_metrics import RelatorioMetricas


COLUNAS_RELATORIO = ["layer", "stage", "metric", "value", "ci_low", "ci_high"]
FORMATO_FLOAT = "%.17g"


def _preparar_destino(output_path):
    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    return output_path


def salvar_json(dados, output_path):
    """
    Salva um objeto em JSON (UTF-8, indentado).

    Args:
        dados (dict | list): Conteúdo serializável
        output_path (Path): Caminho de destino

    Returns:
        Path: Caminho do arquivo salvo
    """
    output_path = _preparar_destino(output_path)
    with open(output_path, "w", encoding="utf-8") as f:
        json.dump(dados, f, ensure_ascii=False, indent=2)
        f.write("\n")
    return output_path


def carregar_json(json_path):
    """
    Carrega um arquivo JSON.

    Args:
        json_path (Path): Caminho do arquivo

    Returns:
        dict | list: Conteúdo
    """
    json_path = Path(json_path)
    if not json_path.exists():
        raise ErroArquivo(f"Arquivo não encontrado: {json_path}", campo=str(json_path))
    with open(json_path, "r", encoding="utf-8") as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise ErroTabelaInvalida(f"JSON malformado em {json_path}: {e}", campo=str(json_path))


def salvar_csv(linhas, output_path, colunas=None):
    """
    Salva uma lista de dicionários em CSV.

    Args:
        linhas (list): Linhas (dicts)
        output_path (Path): Caminho de destino
        colunas (list): Ordem das colunas (padrão: chaves da primeira linha)

    Returns:
        Path: Caminho do arquivo salvo
    """
    output_path = _preparar_destino(output_path)
    df = pd.DataFrame(linhas, columns=colunas)
    df.to_csv(output_path, index=False, float_format=FORMATO_FLOAT, lineterminator="\n")
    return output_path


def salvar_scores_csv(scores, output_path):
    """
    Salva scores de importância como (token_index, score).

    Args:
        scores (ScoresImportancia): Scores de uma camada
        output_path (Path): Caminho de destino

    Returns:
        Path: Caminho salvo
    """
    linhas = [{"token_index": i, "score": float(s)} for i, s in enumerate(scores.scores)]
    return salvar_csv(linhas, output_path, ["token_index", "score"])


def salvar_conjunto_json(conjunto, output_path):
    """
    Salva um conjunto retido como array JSON de índices.
    """
    return salvar_json(list(conjunto.indices), output_path)


def salvar_relatorio_metricas(relatorio, output_path):
    """
    Salva o relatório de métricas em CSV (layer, stage, metric, value, ci_low, ci_high).
    """
    return salvar_csv(list(relatorio.linhas), output_path, COLUNAS_RELATORIO)


def carregar_relatorio_metricas(csv_path):
    """
    Carrega um relatório de métricas salvo em CSV.

    Args:
        csv_path (Path): Caminho do CSV

    Returns:
        RelatorioMetricas: Relatório
    """
    csv_path = Path(csv_path)
    if not csv_path.exists():
        raise ErroArquivo(f"Relatório não encontrado: {csv_path}", campo=str(csv_path))

    df = pd.read_csv(csv_path)
    faltando = [c for c in COLUNAS_RELATORIO if c not in df.columns]
    if faltando:
        raise ErroTabelaInvalida(
            f"Relatório sem as colunas {faltando}: {csv_path}", campo=str(csv_path)
        )

    linhas = []
    for registro in df[COLUNAS_RELATORIO].to_dict(orient="records"):
        linhas.append({
            "layer": int(registro["layer"]),
            "stage": str(registro["stage"]),
            "metric": str(registro["metric"]),
            "value": float(registro["value"]),
            "ci_low": float(registro["ci_low"]),
            "ci_high": float(registro["ci_high"])
        })
    return RelatorioMetricas(tuple(linhas))


def exibir_resumo_plano(plano, contagens=None):
    """
    Exibe um resumo do plano de budget no console.

    Args:
        plano (PlanoOrcamento): Plano calculado
        contagens (ContagensCamada): Budgets inteiros (opcional)
    """
    print(f"\nOK Plano '{plano.estrategia}' (L={plano.num_camadas}, rho={plano.rho})")
    print(f"OK Camadas protegidas: {list(plano.protegidas)}")
    print(f"OK Razão máxima: {plano.razoes.max():.4f}")
    if contagens is not None:
        print(f"OK Budget total: {contagens.total} tokens")


def exibir_resumo_prefill(relatorio):
    """
    Exibe um resumo de um relatório de prefill no console.

    Args:
        relatorio (dict): Saída de relatorio_cache
    """
    print(f"\nOK Plano: {relatorio['plan_name']}")
    print(f"OK Tokens vistos: {relatorio['seen_tokens']}")
    print(f"OK Entradas de KV armazenadas: {relatorio['footprint_entries']}")

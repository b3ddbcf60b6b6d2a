"""
Módulo de configuração do projeto.
Carrega o arquivo .env e concentra os valores padrão usados pelo toolkit.
"""

import os
from pathlib import Path
from dotenv import load_dotenv

from src.errors import ErroConfiguracao


# Valores padrão da configuração de referência (orçamento, prefill, estatística)
RHO_PADRAO = 0.6
RHO_MAX_PADRAO = 0.7
TAMANHO_CHUNK_PADRAO = 1024
N_PERM_PADRAO = 10000
REAMOSTRAGENS_BOOTSTRAP_PADRAO = 1000
ALPHA_BOOTSTRAP_PADRAO = 0.05
KNN_K_PADRAO = 5
TAU_PADRAO = 0.1
PROB_DROPOUT_PADRAO = 0.1
EPSILON_TRANSFORMACAO = 1e-9

ESTAGIOS = ("pre-attention", "post-attention", "post-attention-residual", "post-MLP")
PONTUADORES = ("h2o", "value_aware_l1", "value_aware_l2")


def carregar_configuracao():
    """
    Carrega as configurações do arquivo .env.

    Returns:
        dict: {"output_dir": Path, "seed": int}

    Raises:
        ErroConfiguracao: Se DEPTHKV_SEED não for um inteiro não negativo
    """
    load_dotenv()
    output_dir = Path(os.getenv("DEPTHKV_OUTPUT_DIR", "output"))

    seed_texto = os.getenv("DEPTHKV_SEED", "0")
    try:
        seed = int(seed_texto)
    except ValueError:
        raise ErroConfiguracao(
            f"DEPTHKV_SEED inválida no arquivo .env: '{seed_texto}'", campo="DEPTHKV_SEED"
        )

    if seed < 0:
        raise ErroConfiguracao("DEPTHKV_SEED deve ser não negativa", campo="DEPTHKV_SEED")

    return {"output_dir": output_dir, "seed": seed}

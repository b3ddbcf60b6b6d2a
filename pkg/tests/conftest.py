import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.trace import CabecalhoTrace, TraceAtencao, gerar_trace_sintetico  # noqa: E402


@pytest.fixture
def trace_pequeno():
    return gerar_trace_sintetico(2, 2, 12, 4, 3, seed=11)


@pytest.fixture
def construir_trace():
    """Fábrica de traces a partir de arrays Q/K/V [L][H][N][d]."""

    def _construir(Q, K, V):
        Q = np.asarray(Q, dtype=np.float32)
        K = np.asarray(K, dtype=np.float32)
        V = np.asarray(V, dtype=np.float32)
        L, H, N, dk = Q.shape
        return TraceAtencao(CabecalhoTrace(L, H, N, dk, V.shape[-1]), Q, K, V)

    return _construir


@pytest.fixture(autouse=True)
def sem_env(monkeypatch):
    monkeypatch.delenv("DEPTHKV_OUTPUT_DIR", raising=False)
    monkeypatch.delenv("DEPTHKV_SEED", raising=False)

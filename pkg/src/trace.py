"""
Módulo de traces de atenção e snapshots de representação.
Define os tipos, os formatos binários (DKVT / DKVR), as tabelas de scores (CSV)
e a geração sintética determinística usada nos testes e no CLI.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from src import rng
from src.config import ESTAGIOS
from src.errors import (
    ErroArquivo, ErroDimensao, ErroFormato, ErroMagicInvalido,
    ErroPayloadTruncado, ErroTabelaInvalida, ErroValoresNaoFinitos
)


MAGIC_TRACE = b"DKVT"
MAGIC_SNAPSHOT = b"DKVR"
VERSAO_FORMATO = 1
MARCADORES_PAR = ("original", "augmented")


def _somente_leitura(array, dtype):
    copia = np.array(array, dtype=dtype, copy=True)
    copia.setflags(write=False)
    return copia


@dataclass(frozen=True)
class CabecalhoTrace:
    num_camadas: int
    num_cabecas: int
    tamanho_seq: int
    dim_chave: int
    dim_valor: int

    def __post_init__(self):
        for nome in ("num_camadas", "num_cabecas", "tamanho_seq", "dim_chave", "dim_valor"):
            valor = getattr(self, nome)
            if int(valor) < 1:
                raise ErroDimensao(f"{nome} deve ser >= 1 (recebido {valor})", campo=nome)

    def floats_payload(self):
        """Número de floats do payload: L·H·N·(2·d_k + d_v)."""
        return (self.num_camadas * self.num_cabecas * self.tamanho_seq
                * (2 * self.dim_chave + self.dim_valor))


@dataclass(frozen=True, eq=False)
class TraceAtencao:
    """Tensores Q/K/V [L][H][N][d] em float32, imutáveis após a construção."""

    cabecalho: CabecalhoTrace
    Q: np.ndarray
    K: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        c = self.cabecalho
        formas = {
            "Q": (c.num_camadas, c.num_cabecas, c.tamanho_seq, c.dim_chave),
            "K": (c.num_camadas, c.num_cabecas, c.tamanho_seq, c.dim_chave),
            "V": (c.num_camadas, c.num_cabecas, c.tamanho_seq, c.dim_valor),
        }
        for nome, forma in formas.items():
            tensor = _somente_leitura(getattr(self, nome), np.float32)
            if tensor.shape != forma:
                raise ErroDimensao(f"{nome} tem forma {tensor.shape}, esperado {forma}", campo=nome)
            if not np.all(np.isfinite(tensor)):
                raise ErroValoresNaoFinitos(f"{nome} contém valores não finitos", campo=nome)
            object.__setattr__(self, nome, tensor)


@dataclass(frozen=True, eq=False)
class SnapshotRepresentacao:
    """Matrizes Z [L][estágio][T][d] de um sample (original ou aumentado)."""

    estagios: tuple
    Z: np.ndarray
    marcador: str = "original"

    def __post_init__(self):
        estagios = tuple(self.estagios)
        if not estagios:
            raise ErroDimensao("Snapshot precisa de ao menos um estágio", campo="estagios")
        for estagio in estagios:
            if estagio not in ESTAGIOS:
                raise ErroDimensao(f"Estágio desconhecido: '{estagio}'", campo="estagios")
        if len(set(estagios)) != len(estagios):
            raise ErroDimensao("Estágios repetidos no snapshot", campo="estagios")
        if self.marcador not in MARCADORES_PAR:
            raise ErroDimensao(f"Marcador de par inválido: '{self.marcador}'", campo="marcador")

        Z = _somente_leitura(self.Z, np.float32)
        if Z.ndim != 4 or Z.shape[1] != len(estagios) or min(Z.shape) < 1:
            raise ErroDimensao(
                f"Z tem forma {Z.shape}, esperado [L][{len(estagios)}][T][d] com dimensões >= 1",
                campo="Z"
            )
        if not np.all(np.isfinite(Z)):
            raise ErroValoresNaoFinitos("Z contém valores não finitos", campo="Z")

        object.__setattr__(self, "estagios", estagios)
        object.__setattr__(self, "Z", Z)

    @property
    def num_camadas(self):
        return self.Z.shape[0]

    @property
    def tamanho_seq(self):
        return self.Z.shape[2]

    @property
    def dim_oculta(self):
        return self.Z.shape[3]

    def matriz(self, camada, estagio):
        """
        Matriz T×d de uma camada e estágio, em float64.

        Args:
            camada (int): Índice da camada
            estagio (str): Nome do estágio

        Returns:
            np.ndarray: Matriz T×d
        """
        if estagio not in self.estagios:
            raise ErroDimensao(f"Estágio '{estagio}' ausente no snapshot", campo="estagio")
        if not 0 <= camada < self.num_camadas:
            raise ErroDimensao(f"Camada {camada} fora do intervalo", campo="camada")
        return self.Z[camada, self.estagios.index(estagio)].astype(np.float64)


@dataclass(frozen=True, eq=False)
class TabelaScores:
    """Valores samples × camadas (desempenho por camada podada)."""

    valores: np.ndarray
    rotulos_camadas: tuple = None

    def __post_init__(self):
        valores = _somente_leitura(self.valores, np.float64)
        if valores.ndim != 2 or valores.shape[0] < 1 or valores.shape[1] < 1:
            raise ErroTabelaInvalida(f"Tabela com forma inválida: {valores.shape}")
        if not np.all(np.isfinite(valores)):
            raise ErroTabelaInvalida("Tabela contém células vazias ou não finitas")
        object.__setattr__(self, "valores", valores)

        rotulos = self.rotulos_camadas
        if rotulos is None:
            rotulos = tuple(f"layer_{i}" for i in range(valores.shape[1]))
        rotulos = tuple(str(r) for r in rotulos)
        if len(rotulos) != valores.shape[1]:
            raise ErroTabelaInvalida("Número de rótulos difere do número de camadas")
        object.__setattr__(self, "rotulos_camadas", rotulos)

    @property
    def num_samples(self):
        return self.valores.shape[0]

    @property
    def num_camadas(self):
        return self.valores.shape[1]


# =============================================================================
# Formato binário DKVT
# =============================================================================

def _ler_bytes(path):
    path = Path(path)
    if not path.exists():
        raise ErroArquivo(f"Arquivo não encontrado: {path}", campo=str(path))
    with open(path, "rb") as f:
        return f.read()


def _ler_campos_u32(conteudo, inicio, quantidade, path):
    fim = inicio + 4 * quantidade
    if len(conteudo) < fim:
        raise ErroPayloadTruncado(f"Cabeçalho truncado em {path}", campo=str(path))
    return [int(v) for v in np.frombuffer(conteudo[inicio:fim], dtype="<u4")]


def _verificar_magic_e_versao(conteudo, magic, path):
    if conteudo[:4] != magic:
        raise ErroMagicInvalido(
            f"Magic inválido em {path}: esperado {magic!r}, encontrado {conteudo[:4]!r}",
            campo=str(path)
        )
    versao = _ler_campos_u32(conteudo, 4, 1, path)[0]
    if versao != VERSAO_FORMATO:
        raise ErroFormato(f"Versão de formato não suportada em {path}: {versao}", campo=str(path))


def _ler_payload_f32(conteudo, inicio, quantidade, path):
    esperado = inicio + 4 * quantidade
    if len(conteudo) < esperado:
        raise ErroPayloadTruncado(
            f"Payload truncado em {path}: {len(conteudo)} bytes, esperado {esperado}",
            campo=str(path)
        )
    if len(conteudo) > esperado:
        raise ErroFormato(
            f"Bytes excedentes em {path}: {len(conteudo)} bytes, esperado {esperado}",
            campo=str(path)
        )
    valores = np.frombuffer(conteudo[inicio:esperado], dtype="<f4")
    if not np.all(np.isfinite(valores)):
        raise ErroValoresNaoFinitos(f"Valores não finitos no payload de {path}", campo=str(path))
    return valores.astype(np.float32)


def carregar_trace(path):
    """
    Carrega um trace de atenção no formato DKVT.

    Args:
        path (Path): Caminho do arquivo .dkvt

    Returns:
        TraceAtencao: Trace com tensores consistentes com o cabeçalho

    Raises:
        ErroArquivo: Se o arquivo não existir
        ErroMagicInvalido: Se os 4 primeiros bytes não forem 'DKVT'
        ErroPayloadTruncado: Se o payload for menor que o cabeçalho indica
        ErroValoresNaoFinitos: Se houver NaN/Inf no payload
    """
    conteudo = _ler_bytes(path)
    _verificar_magic_e_versao(conteudo, MAGIC_TRACE, path)

    L, H, N, dk, dv = _ler_campos_u32(conteudo, 8, 5, path)
    try:
        cabecalho = CabecalhoTrace(L, H, N, dk, dv)
    except ErroDimensao as e:
        raise ErroFormato(f"Cabeçalho inválido em {path}: {e.mensagem}", campo=str(path))

    valores = _ler_payload_f32(conteudo, 28, cabecalho.floats_payload(), path)
    blocos = valores.reshape(L, H, N * (2 * dk + dv))
    Q = blocos[:, :, :N * dk].reshape(L, H, N, dk)
    K = blocos[:, :, N * dk:2 * N * dk].reshape(L, H, N, dk)
    V = blocos[:, :, 2 * N * dk:].reshape(L, H, N, dv)

    return TraceAtencao(cabecalho, Q, K, V)


def bytes_trace(trace):
    """
    Serializa um trace no formato DKVT (bit-exato).

    Args:
        trace (TraceAtencao): Trace a serializar

    Returns:
        bytes: Conteúdo do arquivo
    """
    c = trace.cabecalho
    cabecalho = np.array(
        [VERSAO_FORMATO, c.num_camadas, c.num_cabecas, c.tamanho_seq, c.dim_chave, c.dim_valor],
        dtype="<u4"
    )
    L, H = c.num_camadas, c.num_cabecas
    blocos = np.concatenate(
        [trace.Q.reshape(L, H, -1), trace.K.reshape(L, H, -1), trace.V.reshape(L, H, -1)],
        axis=2
    )
    return MAGIC_TRACE + cabecalho.tobytes() + blocos.astype("<f4").tobytes()


def salvar_trace(trace, path):
    """
    Salva um trace no formato DKVT.

    Args:
        trace (TraceAtencao): Trace a salvar
        path (Path): Caminho de destino

    Returns:
        Path: Caminho do arquivo salvo
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(bytes_trace(trace))
    return path


def gerar_trace_sintetico(num_camadas, num_cabecas, tamanho_seq, dim_chave, dim_valor, seed):
    """
    Gera um trace com entradas normais padrão a partir do gerador por contador.
    Os valores são produzidos na ordem do payload DKVT (camada, cabeça, Q, K, V),
    então o valor k do fluxo é o float k do arquivo.

    Args:
        num_camadas (int): L
        num_cabecas (int): H
        tamanho_seq (int): N
        dim_chave (int): d_k
        dim_valor (int): d_v
        seed (int): Semente de 64 bits

    Returns:
        TraceAtencao: Trace determinístico

    Raises:
        ErroDimensao: Se alguma dimensão for zero
    """
    c = CabecalhoTrace(num_camadas, num_cabecas, tamanho_seq, dim_chave, dim_valor)
    L, H, N, dk = c.num_camadas, c.num_cabecas, c.tamanho_seq, c.dim_chave

    # uma camada por vez, no contador correspondente do fluxo
    por_camada = c.floats_payload() // L
    blocos = np.empty((L, por_camada), dtype=np.float32)
    for camada in range(L):
        blocos[camada] = rng.normais(seed, por_camada, inicio=camada * por_camada)
    blocos = blocos.reshape(L, H, -1)
    Q = blocos[:, :, :N * dk].reshape(L, H, N, dk)
    K = blocos[:, :, N * dk:2 * N * dk].reshape(L, H, N, dk)
    V = blocos[:, :, 2 * N * dk:].reshape(L, H, N, c.dim_valor)

    return TraceAtencao(c, Q, K, V)


# =============================================================================
# Formato binário DKVR (snapshots)
# =============================================================================

def carregar_snapshot(path):
    """
    Carrega um snapshot de representação no formato DKVR.

    Args:
        path (Path): Caminho do arquivo .dkvr

    Returns:
        SnapshotRepresentacao: Snapshot carregado
    """
    conteudo = _ler_bytes(path)
    _verificar_magic_e_versao(conteudo, MAGIC_SNAPSHOT, path)

    L, num_estagios = _ler_campos_u32(conteudo, 8, 2, path)
    ids = _ler_campos_u32(conteudo, 16, num_estagios, path)
    pos = 16 + 4 * num_estagios
    T, d = _ler_campos_u32(conteudo, pos, 2, path)
    pos += 8

    if len(conteudo) < pos + 1:
        raise ErroPayloadTruncado(f"Cabeçalho truncado em {path}", campo=str(path))
    tag = conteudo[pos]
    pos += 1

    if any(i >= len(ESTAGIOS) for i in ids) or tag > 1 or min(L, num_estagios, T, d) < 1:
        raise ErroFormato(f"Cabeçalho de snapshot inválido em {path}", campo=str(path))

    valores = _ler_payload_f32(conteudo, pos, L * num_estagios * T * d, path)
    return SnapshotRepresentacao(
        estagios=tuple(ESTAGIOS[i] for i in ids),
        Z=valores.reshape(L, num_estagios, T, d),
        marcador=MARCADORES_PAR[tag]
    )


def salvar_snapshot(snapshot, path):
    """
    Salva um snapshot no formato DKVR.

    Args:
        snapshot (SnapshotRepresentacao): Snapshot a salvar
        path (Path): Caminho de destino

    Returns:
        Path: Caminho do arquivo salvo
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    L, S, T, d = snapshot.Z.shape
    campos = [VERSAO_FORMATO, L, S] + [ESTAGIOS.index(e) for e in snapshot.estagios] + [T, d]
    conteudo = (
        MAGIC_SNAPSHOT
        + np.array(campos, dtype="<u4").tobytes()
        + bytes([MARCADORES_PAR.index(snapshot.marcador)])
        + snapshot.Z.astype("<f4").tobytes()
    )
    with open(path, "wb") as f:
        f.write(conteudo)
    return path


def gerar_snapshot_sintetico(num_camadas, estagios, tamanho_seq, dim_oculta, seed):
    """
    Gera um snapshot original com entradas normais padrão.

    Args:
        num_camadas (int): L
        estagios (tuple): Estágios incluídos
        tamanho_seq (int): T
        dim_oculta (int): d
        seed (int): Semente

    Returns:
        SnapshotRepresentacao: Snapshot com marcador 'original'
    """
    if min(num_camadas, tamanho_seq, dim_oculta) < 1:
        raise ErroDimensao("Dimensões do snapshot devem ser >= 1")
    forma = (num_camadas, len(estagios), tamanho_seq, dim_oculta)
    valores = rng.normais(seed, int(np.prod(forma))).astype(np.float32)
    return SnapshotRepresentacao(tuple(estagios), valores.reshape(forma), "original")


def indices_sobreviventes(tamanho_seq, prob_dropout, seed):
    """
    Índices das linhas que sobrevivem ao dropout de tokens.
    A linha t é descartada quando u_t < prob_dropout (u_t = uniforme do contador t).
    Se todas forem descartadas, a linha 0 é mantida.

    Args:
        tamanho_seq (int): T
        prob_dropout (float): Probabilidade de descarte em [0, 1)
        seed (int): Semente

    Returns:
        np.ndarray: Índices crescentes das linhas mantidas
    """
    if not 0.0 <= prob_dropout < 1.0:
        raise ErroDimensao(
            f"prob_dropout deve estar em [0, 1) (recebido {prob_dropout})", campo="drop_prob"
        )
    u = rng.uniformes(seed, tamanho_seq)
    mantidos = np.flatnonzero(u >= prob_dropout)
    if mantidos.size == 0:
        mantidos = np.array([0], dtype=np.int64)
    return mantidos


def perturbar_snapshot(snapshot, prob_dropout, seed):
    """
    Constrói o par aumentado de um snapshot descartando linhas de token.
    A mesma máscara vale para todas as camadas e estágios.

    Args:
        snapshot (SnapshotRepresentacao): Snapshot original
        prob_dropout (float): Probabilidade de descarte por linha
        seed (int): Semente

    Returns:
        SnapshotRepresentacao: Snapshot com marcador 'augmented'
    """
    if snapshot.marcador != "original":
        raise ErroDimensao("Só snapshots originais podem ser perturbados", campo="pair_tag")

    mantidos = indices_sobreviventes(snapshot.tamanho_seq, prob_dropout, seed)
    return SnapshotRepresentacao(snapshot.estagios, snapshot.Z[:, :, mantidos, :], "augmented")


# =============================================================================
# Tabelas de scores (CSV)
# =============================================================================

def carregar_tabela_scores(path):
    """
    Carrega uma tabela de scores CSV (cabeçalho + uma linha por sample).

    Args:
        path (Path): Caminho do CSV

    Returns:
        TabelaScores: Tabela carregada

    Raises:
        ErroTabelaInvalida: Se houver células vazias ou não numéricas
    """
    path = Path(path)
    if not path.exists():
        raise ErroArquivo(f"Tabela não encontrada: {path}", campo=str(path))

    try:
        df = pd.read_csv(path)
        valores = df.apply(pd.to_numeric, errors="raise").to_numpy(dtype=np.float64)
    except (ValueError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ErroTabelaInvalida(f"Tabela malformada em {path}: {e}", campo=str(path))

    try:
        return TabelaScores(valores, tuple(df.columns))
    except ErroTabelaInvalida as e:
        raise ErroTabelaInvalida(f"{e.mensagem} ({path})", campo=str(path))


def salvar_tabela_scores(tabela, path):
    """
    Salva uma tabela de scores em CSV.

    Args:
        tabela (TabelaScores): Tabela
        path (Path): Caminho de destino

    Returns:
        Path: Caminho salvo
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df = pd.DataFrame(tabela.valores, columns=list(tabela.rotulos_camadas))
    df.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    return path

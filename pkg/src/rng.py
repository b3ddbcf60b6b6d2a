"""
Gerador pseudoaleatório baseado em contador (SplitMix64).

Cada valor depende apenas de (seed, índice), então qualquer trecho da
sequência pode ser calculado diretamente, em qualquer ordem ou em paralelo,
sempre com o mesmo resultado:

    x_i = mix64(seed + (i + 1) * 0x9E3779B97F4A7C15  mod 2^64)
    u_i = ((x_i >> 11) + 0.5) * 2^-53                (uniforme em (0, 1))
    z_k = sqrt(-2 ln u_2k) * cos(2 pi u_2k+1)       (normal padrão, Box-Muller)
"""

import numpy as np


MASCARA_64 = 0xFFFFFFFFFFFFFFFF
GAMA = 0x9E3779B97F4A7C15
_MULT_1 = np.uint64(0xBF58476D1CE4E5B9)
_MULT_2 = np.uint64(0x94D049BB133111EB)
_MULT_FLUXO = 0xD1B54A32D192ED03


def misturar64(x):
    """
    Função de mistura (finalizador) do SplitMix64, vetorizada.

    Args:
        x (array-like): Valores inteiros de 64 bits

    Returns:
        np.ndarray: Array uint64 (sempre ao menos 1-D)
    """
    z = np.atleast_1d(np.asarray(x, dtype=np.uint64)).copy()
    z ^= z >> np.uint64(30)
    z *= _MULT_1
    z ^= z >> np.uint64(27)
    z *= _MULT_2
    z ^= z >> np.uint64(31)
    return z


def inteiros64(seed, quantidade, inicio=0):
    """
    Saídas brutas de 64 bits para os contadores inicio..inicio+quantidade-1.

    Args:
        seed (int): Semente (reduzida módulo 2^64)
        quantidade (int): Número de valores
        inicio (int): Primeiro contador

    Returns:
        np.ndarray: Array uint64
    """
    contadores = np.arange(inicio, inicio + quantidade, dtype=np.uint64)
    base = np.uint64(int(seed) & MASCARA_64)
    return misturar64(base + (contadores + np.uint64(1)) * np.uint64(GAMA))


def uniformes(seed, quantidade, inicio=0):
    """
    Uniformes em (0, 1) com 53 bits de resolução.

    Args:
        seed (int): Semente
        quantidade (int): Número de valores
        inicio (int): Primeiro contador

    Returns:
        np.ndarray: Array float64
    """
    bits = inteiros64(seed, quantidade, inicio) >> np.uint64(11)
    return (bits.astype(np.float64) + 0.5) * (2.0 ** -53)


def normais(seed, quantidade, inicio=0):
    """
    Normais padrão via Box-Muller; o valor k usa os contadores 2k e 2k+1.

    Args:
        seed (int): Semente
        quantidade (int): Número de valores
        inicio (int): Índice do primeiro valor normal

    Returns:
        np.ndarray: Array float64
    """
    u = uniformes(seed, 2 * quantidade, inicio=2 * inicio)
    u1 = u[0::2]
    u2 = u[1::2]
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def derivar_seed(seed, identificador):
    """
    Deriva a semente de um fluxo independente (réplica, camada, métrica...).

    Args:
        seed (int): Semente principal
        identificador (int): Identificador do fluxo

    Returns:
        int: Nova semente de 64 bits
    """
    combinado = (int(seed) ^ ((int(identificador) + 1) * _MULT_FLUXO)) & MASCARA_64
    return int(misturar64(combinado)[0])

"""
Pacote principal do toolkit de poda de KV cache por camada.
"""

__version__ = "1.0.0"

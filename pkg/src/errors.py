"""
Hierarquia de erros do toolkit.
Cada classe carrega o código de saída usado pelo main.py.
"""


class ErroDepthKV(Exception):
    """Erro base. `campo` identifica a flag ou o arquivo responsável (se houver)."""

    codigo_saida = 1

    def __init__(self, mensagem, campo=None):
        super().__init__(mensagem)
        self.mensagem = mensagem
        self.campo = campo

    def para_dict(self):
        """
        Representação serializável do erro (stderr do CLI).

        Returns:
            dict: {"erro", "mensagem", "campo", "codigo"}
        """
        return {
            "erro": type(self).__name__,
            "mensagem": self.mensagem,
            "campo": self.campo,
            "codigo": self.codigo_saida
        }


class ErroConfiguracao(ErroDepthKV, ValueError):
    codigo_saida = 2


class ErroOrcamentoInviavel(ErroDepthKV, ValueError):
    codigo_saida = 3


class ErroFormato(ErroDepthKV, ValueError):
    codigo_saida = 4


class ErroMagicInvalido(ErroFormato):
    pass


class ErroPayloadTruncado(ErroFormato):
    pass


class ErroValoresNaoFinitos(ErroFormato):
    pass


class ErroTabelaInvalida(ErroFormato):
    pass


class ErroDimensao(ErroDepthKV, ValueError):
    codigo_saida = 5


class ErroArquivo(ErroDepthKV, FileNotFoundError):
    codigo_saida = 6


class ErroEntradaSaida(ErroDepthKV, OSError):
    """Falha de leitura ou escrita que não é arquivo ausente (pasta inválida, permissão)."""

    codigo_saida = 7

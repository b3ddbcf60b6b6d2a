import numpy as np
import pytest

from src.allocation import (
    PlanoOrcamento, distribuir_com_teto, plano_ablacao_camada, plano_de_dict, plano_mga,
    plano_mlma, plano_mlp, plano_para_dict, plano_uniforme, razoes_para_contagens,
    transformar_metrica
)
from src.config import EPSILON_TRANSFORMACAO
from src.errors import ErroDimensao, ErroOrcamentoInviavel


def test_uniforme():
    assert list(plano_uniforme(4, 0.6).razoes) == [0.6] * 4
    assert list(plano_uniforme(3, 0.0).razoes) == [0.0] * 3


def test_uniforme_protegendo_a_primeira():
    plano = plano_uniforme(4, 0.6, proteger_primeira=True)
    assert plano.razoes[0] == 0.0
    assert plano.razoes[1:] == pytest.approx([0.8] * 3)
    assert plano.protegidas == (0,)
    assert plano.razoes.mean() == pytest.approx(0.6, abs=1e-12)


def test_mlp():
    plano = plano_mlp(8, 0.5)
    assert plano.protegidas == (0, 4, 5)
    esperado = [0.0, 0.8, 0.8, 0.8, 0.0, 0.0, 0.8, 0.8]
    assert plano.razoes == pytest.approx(esperado, abs=1e-12)
    assert list(plano_mlp(8, 0.0).razoes) == [0.0] * 8


def test_mlp_inviavel():
    with pytest.raises(ErroOrcamentoInviavel):
        plano_mlp(8, 0.7)


def test_mga_metrica_igual():
    plano = plano_mga(5, 0.4, [1.0] * 5)
    assert plano.razoes == pytest.approx([0.0, 0.5, 0.5, 0.5, 0.5], abs=1e-12)


def test_mga_exemplo_com_teto():
    plano = plano_mga(5, 0.56, [0.0, 4.0, 1.0, 1.0, 1.0])
    assert plano.razoes == pytest.approx([0.0, 0.7, 0.7, 0.7, 0.7], abs=1e-9)
    assert plano.razoes.max() <= 0.7 + 1e-12


def test_distribuicao_com_teto_redistribui_o_excesso():
    pesos = np.array([4.0, 1.0, 1.0, 1.0]) / 7.0
    partes = distribuir_com_teto(2.8, pesos, 0.7)
    assert partes == pytest.approx([0.7] * 4, abs=1e-9)

    # sem saturação: proporcional
    partes = distribuir_com_teto(1.0, np.array([0.5, 0.25, 0.25]), 0.7)
    assert partes == pytest.approx([0.5, 0.25, 0.25])


def test_mga_poda_mais_as_camadas_de_infonce_alto():
    plano = plano_mga(5, 0.2, [9.0, 0.0, 1.0, 2.0, 3.0])
    assert plano.razoes[0] == 0.0
    assert np.all(np.diff(plano.razoes[1:]) > 0)


def test_mga_metrica_com_tamanho_errado():
    with pytest.raises(ErroDimensao):
        plano_mga(5, 0.2, [1.0, 2.0])


def test_mlma_dois():
    plano = plano_mlma(8, 0.25, [1.0] * 8, camadas_meio=2)
    assert plano.estrategia == "mlma-2"
    assert plano.protegidas == (0, 4, 5)
    for camada in (1, 2, 3, 6, 7):
        assert plano.razoes[camada] == pytest.approx(0.4, abs=1e-12)


def test_mlma_seis_so_poda_a_camada_um():
    plano = plano_mlma(8, 0.05, [1.0] * 8, camadas_meio=6)
    assert plano.protegidas == (0, 2, 3, 4, 5, 6, 7)
    assert plano.razoes[1] == pytest.approx(0.4)
    with pytest.raises(ErroOrcamentoInviavel):
        plano_mlma(8, 0.1, [1.0] * 8, camadas_meio=6)


def test_mlma_camadas_do_meio_quatro():
    plano = plano_mlma(12, 0.1, [1.0] * 12, camadas_meio=4)
    assert plano.protegidas == (0, 5, 6, 7, 8)


def test_mlma_variante_invalida():
    with pytest.raises(ErroDimensao):
        plano_mlma(8, 0.1, [1.0] * 8, camadas_meio=3)


def test_configuracao_de_referencia_l32():
    metrica = np.linspace(0.0, 1.0, 32)
    for plano in (plano_uniforme(32, 0.6), plano_mga(32, 0.6, metrica), plano_mlp(32, 0.6),
                  plano_mlma(32, 0.6, metrica, 2)):
        assert plano.razoes.mean() == pytest.approx(0.6, abs=1e-9)
    # 27 e 25 camadas podadas com teto 0.7 não comportam L·rho = 19.2
    for m in (4, 6):
        with pytest.raises(ErroOrcamentoInviavel):
            plano_mlma(32, 0.6, metrica, m)
        assert plano_mlma(32, 0.6, metrica, m, rho_max=0.8).razoes.max() <= 0.8 + 1e-12


def _construtores(L, rho, metrica):
    return {
        "uniform": lambda: plano_uniforme(L, rho),
        "mlp": lambda: plano_mlp(L, rho),
        "mga": lambda: plano_mga(L, rho, metrica),
        "mlma-2": lambda: plano_mlma(L, rho, metrica, 2),
        "mlma-4": lambda: plano_mlma(L, rho, metrica, 4),
        "mlma-6": lambda: plano_mlma(L, rho, metrica, 6),
    }


def test_identidade_do_orcamento_em_casos_aleatorios():
    gerador = np.random.default_rng(2024)
    viaveis = 0
    for _ in range(300):
        L = int(gerador.integers(8, 65))
        rho = float(gerador.uniform(0.0, 0.65))
        N = int(gerador.integers(1, 4097))
        metrica = gerador.normal(size=L)

        for nome, construir in _construtores(L, rho, metrica).items():
            try:
                plano = construir()
            except ErroOrcamentoInviavel:
                continue
            viaveis += 1
            assert abs(plano.razoes.mean() - rho) < 1e-9, nome
            assert np.all(plano.razoes >= 0.0)
            for camada in plano.protegidas:
                assert plano.razoes[camada] == 0.0
            if nome.startswith(("mga", "mlma")):
                assert plano.razoes.max() <= 0.7 + 1e-12

            contagens = razoes_para_contagens(plano, N)
            alvo = int(np.floor(((1.0 - plano.razoes) * N).sum() + 0.5))
            assert sum(contagens.contagens) == contagens.total
            assert contagens.total == alvo or min(contagens.contagens) == 1
            assert all(1 <= c <= N for c in contagens.contagens)
    assert viaveis > 1000


def test_contagens_exemplos():
    plano = PlanoOrcamento("custom", 3, 0.6, [0.0, 0.9, 0.9])
    assert razoes_para_contagens(plano, 10).contagens == (10, 1, 1)
    assert razoes_para_contagens(plano, 10).total == 12

    assert razoes_para_contagens(plano_uniforme(2, 0.6), 10).contagens == (4, 4)

    empate = PlanoOrcamento("custom", 2, 0.5, [0.5, 0.5])
    assert razoes_para_contagens(empate, 5).contagens == (3, 2)


def test_contagens_garantem_um_token_por_camada():
    plano = PlanoOrcamento("custom", 2, 0.5, [1.0, 0.0])
    contagens = razoes_para_contagens(plano, 4)
    assert contagens.contagens == (1, 3)
    assert contagens.total == 4


def test_plano_de_ablacao():
    plano = plano_ablacao_camada(4, 2, 0.5)
    assert plano.estrategia == "ablation-2"
    assert list(plano.razoes) == [0.0, 0.0, 0.5, 0.0]
    assert plano.rho == pytest.approx(0.125)
    assert plano.protegidas == (0, 1, 3)
    with pytest.raises(ErroDimensao):
        plano_ablacao_camada(4, 4, 0.5)


def test_transformacoes_da_metrica():
    deslocada = transformar_metrica([2.0, 5.0, 3.0], [0, 1, 2])
    assert deslocada == pytest.approx([EPSILON_TRANSFORMACAO, 3.0 + EPSILON_TRANSFORMACAO,
                                       1.0 + EPSILON_TRANSFORMACAO])
    assert list(transformar_metrica([2.0, 5.0, 3.0], [0, 1, 2], "posto")) == [1.0, 3.0, 2.0]
    assert list(transformar_metrica([9.0, 5.0, 3.0], [1, 2], "posto")) == [2.0, 1.0]


def test_plano_em_json():
    plano = plano_mga(5, 0.4, [0.0, 1.0, 2.0, 3.0, 4.0])
    dados = plano_para_dict(plano, razoes_para_contagens(plano, 100))
    assert dados["strategy"] == "mga"
    assert sum(dados["counts"]) == 300
    recarregado = plano_de_dict(dados)
    np.testing.assert_array_equal(recarregado.razoes, plano.razoes)
    assert recarregado.protegidas == plano.protegidas


def test_rho_fora_do_intervalo():
    with pytest.raises(ErroDimensao):
        plano_uniforme(4, 1.0)
    with pytest.raises(ErroDimensao):
        plano_mga(4, -0.1, [1.0] * 4)

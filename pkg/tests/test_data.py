import numpy as np
import pytest

from pathmed.data import (
    ColumnRoles,
    Dataset,
    Formula,
    Interact,
    Intercept,
    Col,
    Pow,
    TreatmentCoding,
    build_design,
    formula,
    load_csv,
)
from pathmed.errors import (
    CodingError,
    FormulaError,
    MissingDataError,
    ParseError,
    SchemaError,
)


def small_dataset():
    return Dataset(
        c0=np.array([2.0, 3.0]),
        a=np.array([1.0, 0.0]),
        c1=np.array([[5.0], [6.0]]),
        m=np.array([7.0, 8.0]),
        y=np.array([0.0, 1.0]),
        c0_names=("c0",),
        c1_names=("c1",),
    )


class TestFormulaParsing:
    def test_grammar(self):
        f = formula("1 + c0 + A + c11 + M + A:M")
        assert str(f) == "1 + c0 + A + c11 + M + A:M"
        assert f.terms[0] == Intercept()
        assert f.terms[1] == Col("c0")
        assert f.terms[-1] == Interact(("A", "M"))

    def test_power_and_multiway(self):
        f = formula("1 + c0^2 + c0:c11:M")
        assert f.terms[1] == Pow("c0", 2)
        assert f.terms[2] == Interact(("M", "c0", "c11"))

    def test_interaction_order_is_canonical(self):
        assert formula("A:M").terms[0] == formula("M:A").terms[0]

    def test_self_interaction_becomes_power(self):
        assert formula("c0:c0").terms[0] == Pow("c0", 2)

    def test_unit_power_is_column(self):
        assert formula("c0^1").terms[0] == Col("c0")

    def test_duplicate_terms_rejected(self):
        with pytest.raises(FormulaError):
            formula("1 + c0 + c0")

    def test_bad_tokens_rejected(self):
        with pytest.raises(ParseError):
            formula("c0 + 2x")
        with pytest.raises(ParseError):
            formula("c0^x")
        with pytest.raises(ParseError):
            formula("")

    def test_drop_treatment_terms(self):
        f = formula("1 + c0 + A + M + A:M + A:c0 + A^2")
        assert str(f.drop_treatment_terms()) == "1 + c0 + M"


class TestBuildDesign:
    def test_intercept_only(self):
        data = small_dataset()
        dm = build_design(data, formula("1"))
        assert dm.values.shape == (2, 1)
        assert np.all(dm.values == 1.0)

    def test_direct_expansion(self):
        data = small_dataset()
        dm = build_design(data, formula("1 + c0 + A + A:c0"))
        expected = np.array([[1.0, 2.0, 1.0, 2.0],
                             [1.0, 3.0, 0.0, 0.0]])
        np.testing.assert_array_equal(dm.values, expected)

    def test_a_override_forces_level(self):
        data = small_dataset()
        dm = build_design(data, formula("1 + c0 + A + A:c0"), a_override=0)
        expected = np.array([[1.0, 2.0, 0.0, 0.0],
                             [1.0, 3.0, 0.0, 0.0]])
        np.testing.assert_array_equal(dm.values, expected)

    def test_m_override_scalar_and_vector(self):
        data = small_dataset()
        dm = build_design(data, formula("M"), m_override=1.5)
        np.testing.assert_array_equal(dm.values[:, 0], [1.5, 1.5])
        dm = build_design(data, formula("M"), m_override=np.array([2.0, 4.0]))
        np.testing.assert_array_equal(dm.values[:, 0], [2.0, 4.0])

    def test_override_with_observed_a_is_identity(self, sim_draw_small):
        f = formula("1 + c0 + A + c11 + M + A:M")
        base = build_design(sim_draw_small, f).values
        # forcing each arm then recombining by the observed arm reproduces it
        at0 = build_design(sim_draw_small, f, a_override=0).values
        at1 = build_design(sim_draw_small, f, a_override=1).values
        recombined = np.where(sim_draw_small.a[:, None] == 1.0, at1, at0)
        np.testing.assert_array_equal(base, recombined)

    def test_row_permutation_equivariance(self, sim_draw_small):
        f = formula("1 + c0 + A + c11:M + c0^2")
        rng = np.random.default_rng(7)
        perm = rng.permutation(sim_draw_small.n)
        direct = build_design(sim_draw_small.subset(perm), f).values
        permuted = build_design(sim_draw_small, f).values[perm]
        np.testing.assert_array_equal(direct, permuted)

    def test_unresolved_name(self):
        with pytest.raises(FormulaError):
            build_design(small_dataset(), formula("1 + nope"))


class TestDataset:
    def test_treatment_must_be_binary(self):
        with pytest.raises(CodingError):
            Dataset(c0=np.zeros(2), a=np.array([0.0, 2.0]), c1=np.zeros((2, 1)),
                    m=np.zeros(2), y=np.zeros(2), c0_names=("c0",), c1_names=("c1",))

    def test_reserved_names(self):
        with pytest.raises(SchemaError):
            Dataset(c0=np.zeros(2), a=np.zeros(2), c1=np.zeros((2, 1)),
                    m=np.zeros(2), y=np.zeros(2), c0_names=("A",), c1_names=("c1",))

    def test_duplicate_names(self):
        with pytest.raises(SchemaError):
            Dataset(c0=np.zeros(2), a=np.zeros(2), c1=np.zeros((2, 1)),
                    m=np.zeros(2), y=np.zeros(2), c0_names=("x",), c1_names=("x",))

    def test_no_missing_values(self):
        with pytest.raises(MissingDataError):
            Dataset(c0=np.array([np.nan, 1.0]), a=np.zeros(2), c1=np.zeros((2, 1)),
                    m=np.zeros(2), y=np.zeros(2), c0_names=("c0",), c1_names=("c1",))

    def test_coding_levels_must_differ(self):
        with pytest.raises(CodingError):
            TreatmentCoding(a=1, a_prime=1)


CSV_BODY = """c0,a,c11,c12,c13,m,y
0.1,0,1.0,2.0,3.0,0.5,1.5
0.2,1,1.1,2.1,3.1,0.6,1.6
0.3,0,1.2,2.2,3.2,0.7,1.7
"""

ROLES = ColumnRoles(c0=("c0",), a="a", c1=("c11", "c12", "c13"), m="m", y="y")


class TestLoadCsv:
    def test_three_row_ingestion(self, tmp_path):
        path = tmp_path / "toy.csv"
        path.write_text(CSV_BODY)
        data = load_csv(path, ROLES, TreatmentCoding(a=1, a_prime=0))
        assert data.n == 3
        assert data.c0.shape == (3, 1)
        assert data.c1.shape == (3, 3)
        np.testing.assert_array_equal(data.a, [0.0, 1.0, 0.0])

    def test_recode_maps_reference_to_zero(self, tmp_path):
        path = tmp_path / "coded.csv"
        path.write_text(CSV_BODY.replace("\n0.1,0,", "\n0.1,5,")
                        .replace("\n0.2,1,", "\n0.2,3,")
                        .replace("\n0.3,0,", "\n0.3,5,"))
        data = load_csv(path, ROLES, TreatmentCoding(a=3, a_prime=5))
        np.testing.assert_array_equal(data.a, [0.0, 1.0, 0.0])

    def test_missing_column(self, tmp_path):
        path = tmp_path / "nom.csv"
        path.write_text(CSV_BODY.replace("c0,a,c11,c12,c13,m,y",
                                         "c0,a,c11,c12,c13,mm,y"))
        with pytest.raises(SchemaError, match="'m'"):
            load_csv(path, ROLES, TreatmentCoding(a=1, a_prime=0))

    def test_out_of_coding_value(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text(CSV_BODY.replace("\n0.2,1,", "\n0.2,2,"))
        with pytest.raises(CodingError):
            load_csv(path, ROLES, TreatmentCoding(a=1, a_prime=0))

    def test_non_numeric_cell_names_row_and_column(self, tmp_path):
        path = tmp_path / "nn.csv"
        path.write_text(CSV_BODY.replace("2.1", "oops"))
        with pytest.raises(ParseError, match=r"row 3.*'c12'"):
            load_csv(path, ROLES, TreatmentCoding(a=1, a_prime=0))

    def test_missing_cell_is_an_error(self, tmp_path):
        path = tmp_path / "gap.csv"
        path.write_text(CSV_BODY.replace("2.1", ""))
        with pytest.raises(MissingDataError):
            load_csv(path, ROLES, TreatmentCoding(a=1, a_prime=0))

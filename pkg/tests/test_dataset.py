import numpy as np
import pytest

from copnet.dataset import (
    MISSING,
    ProximityData,
    SurveyDataset,
    TraitSpec,
    describe,
    load_proximity,
    load_survey,
    load_trait_schema,
    write_proximity,
    write_survey,
    write_trait_schema,
)
from copnet.errors import DataError

TRAITS3 = [TraitSpec("a", 4), TraitSpec("b", 10), TraitSpec("c", 3)]


def _write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_load_survey_basic(tmp_path):
    rows = ["group,respondent_id,age,a,b,c"]
    for g in ("DE", "FR"):
        for i in range(5):
            rows.append(f"{g},{g}{i},{30 + i},1,{i + 1},2")
    path = _write(tmp_path, "\n".join(rows))
    ds = load_survey(path, TRAITS3)
    assert ds.groups == ("DE", "FR")
    assert ds.n_traits == 3
    assert ds.n_respondents("DE") == 5
    assert ds.covariate_names == ("const", "age")
    assert np.all(ds.covariates["DE"][:, 0] == 1.0)


def test_missing_cell_becomes_missing_row_retained(tmp_path):
    path = _write(
        tmp_path,
        "group,respondent_id,age,a,b,c\nDE,x,30,1,,2\nDE,y,31,2,3,1\n",
    )
    ds = load_survey(path, TRAITS3)
    assert ds.n_respondents("DE") == 2
    assert ds.responses["DE"][0, 1] == MISSING
    assert ds.responses["DE"][0, 0] == 1


def test_out_of_range_category_names_row_and_trait(tmp_path):
    path = _write(
        tmp_path,
        "group,respondent_id,age,a,b,c\nDE,x,30,1,11,2\n",
    )
    with pytest.raises(DataError, match=r"row 2.*'b'.*11"):
        load_survey(path, TRAITS3)


def test_unknown_group_rejected_when_groups_given(tmp_path):
    path = _write(tmp_path, "group,respondent_id,age,a,b,c\nXX,x,30,1,1,2\n")
    with pytest.raises(DataError, match="unknown group"):
        load_survey(path, TRAITS3, groups=("DE", "FR"))


def test_missing_covariate_drops_row_with_count(tmp_path):
    path = _write(
        tmp_path,
        "group,respondent_id,age,a,b,c\nDE,x,,1,2,2\nDE,y,40,2,3,1\n",
    )
    ds = load_survey(path, TRAITS3)
    assert ds.n_respondents("DE") == 1
    assert ds.n_dropped["DE"] == 1


def test_survey_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    rows = ["group,respondent_id,age,gender,a,b,c"]
    for g in ("DE", "FR", "IT"):
        for i in range(8):
            vals = [
                str(rng.integers(1, t.n_categories + 1)) if rng.random() > 0.2 else ""
                for t in TRAITS3
            ]
            rows.append(
                f"{g},{g}{i},{rng.uniform(18, 90)!r},{rng.integers(1, 3)},"
                + ",".join(vals)
            )
    path = _write(tmp_path, "\n".join(rows))
    ds = load_survey(path, TRAITS3)
    out = tmp_path / "copy.csv"
    write_survey(ds, out)
    ds2 = load_survey(out, TRAITS3)
    assert ds2.groups == ds.groups
    for g in ds.groups:
        np.testing.assert_array_equal(ds2.responses[g], ds.responses[g])
        np.testing.assert_array_equal(ds2.covariates[g], ds.covariates[g])
        assert ds2.respondent_ids[g] == ds.respondent_ids[g]


def test_trait_schema_round_trip(tmp_path):
    path = tmp_path / "schema.json"
    write_trait_schema(TRAITS3, path)
    traits = load_trait_schema(path)
    assert traits == TRAITS3


def test_trait_spec_validation():
    with pytest.raises(DataError):
        TraitSpec("bad", 1)


def _tiny_dataset(y_de):
    return SurveyDataset(
        groups=("DE",),
        traits=(TraitSpec("a", 4),),
        responses={"DE": np.asarray(y_de).reshape(-1, 1)},
        covariates={"DE": np.ones((len(y_de), 1))},
        covariate_names=("const",),
    )


def test_describe_arithmetic():
    ds = _tiny_dataset([1, 2, MISSING, 3])
    st = describe(ds)
    assert st.group_mean[0, 0] == pytest.approx(2.0)
    assert st.group_missing[0, 0] == pytest.approx(0.25)
    assert st.overall_mean[0] == pytest.approx(2.0)


def test_describe_all_missing_is_nan():
    ds = _tiny_dataset([MISSING, MISSING])
    st = describe(ds)
    assert np.isnan(st.group_mean[0, 0])
    assert st.group_missing[0, 0] == 1.0


def test_describe_permutation_invariant():
    rng = np.random.default_rng(1)
    y = rng.integers(1, 5, size=60)
    y[rng.random(60) < 0.3] = MISSING
    a = describe(_tiny_dataset(y))
    b = describe(_tiny_dataset(rng.permutation(y)))
    np.testing.assert_allclose(a.group_mean, b.group_mean)
    np.testing.assert_allclose(a.group_missing, b.group_missing)


def test_describe_means_within_category_range():
    rng = np.random.default_rng(2)
    y = rng.integers(1, 5, size=100)
    st = describe(_tiny_dataset(y))
    assert 1.0 <= st.group_mean[0, 0] <= 4.0


PROX_HEADER = "k1,k2,s1,s2,s3,s4"


def test_load_proximity_full(tmp_path):
    lines = [PROX_HEADER]
    for a, b in (("A", "B"), ("A", "C"), ("B", "C")):
        lines.append(f"{a},{b},0.1,0.2,0.3,0.4")
    path = _write(tmp_path, "\n".join(lines), "prox.csv")
    prox = load_proximity(path, ["A", "B", "C"])
    assert prox.dim == 4
    assert len(prox.sim) == 3
    np.testing.assert_allclose(prox.get("C", "A"), prox.get("A", "C"))


def test_load_proximity_duplicate_equal_ok(tmp_path):
    text = f"{PROX_HEADER}\nA,B,1,2,3,4\nB,A,1,2,3,4\nA,C,0,0,0,0\nB,C,0,0,0,0\n"
    prox = load_proximity(_write(tmp_path, text, "p.csv"), ["A", "B", "C"])
    assert len(prox.sim) == 3


def test_load_proximity_asymmetric_duplicate_rejected(tmp_path):
    text = f"{PROX_HEADER}\nA,B,1,2,3,4\nB,A,1,2,3,5\nA,C,0,0,0,0\nB,C,0,0,0,0\n"
    with pytest.raises(DataError, match="disagree"):
        load_proximity(_write(tmp_path, text, "p.csv"), ["A", "B", "C"])


def test_load_proximity_missing_pair_named(tmp_path):
    text = f"{PROX_HEADER}\nA,B,1,2,3,4\nB,C,0,0,0,0\n"
    with pytest.raises(DataError, match=r"\('A', 'C'\)"):
        load_proximity(_write(tmp_path, text, "p.csv"), ["A", "B", "C"])


def test_load_proximity_non_finite_rejected(tmp_path):
    text = f"{PROX_HEADER}\nA,B,1,2,inf,4\n"
    with pytest.raises(DataError, match="non-finite"):
        load_proximity(_write(tmp_path, text, "p.csv"), ["A", "B"])


def test_proximity_round_trip_and_tensor(tmp_path):
    rng = np.random.default_rng(5)
    groups = ["A", "B", "C", "D"]
    sim = {}
    for i in range(4):
        for j in range(i + 1, 4):
            sim[(groups[i], groups[j])] = rng.normal(size=2)
    prox = ProximityData(dim=2, names=("x", "y"), sim=sim)
    path = tmp_path / "prox.csv"
    write_proximity(prox, groups, path)
    prox2 = load_proximity(path, groups)
    t = prox2.tensor(groups)
    assert t.shape == (4, 4, 2)
    np.testing.assert_allclose(t, np.transpose(t, (1, 0, 2)))
    np.testing.assert_allclose(np.diagonal(t, axis1=0, axis2=1), 0.0)
    np.testing.assert_allclose(t[0, 1], sim[("A", "B")])

import datetime as dt

import pytest

from forecastbench.config import (
    ArimaSpec,
    DeepArSpec,
    DeepFactorSpec,
    ExperimentPlan,
    RecurrentSpec,
    SarimaSpec,
    SarimaxSpec,
    load_plan,
    parse_model,
    parse_plan,
)
from forecastbench.errors import ConfigError
from forecastbench.neural import CellKind


def base(**extra):
    doc = {"schema_version": 1, "dataset": {"path": "bundled:index"}, "models": [{"kind": "arima"}]}
    doc.update(extra)
    return doc


def test_defaults():
    plan = parse_plan(base())
    assert plan.fractions == (1.0, 0.5, 0.25)
    assert plan.horizon == 36
    assert plan.boundary == dt.date(2019, 12, 31)
    assert isinstance(plan.models[0], ArimaSpec)
    assert plan.dataset.resolve().name == "synthetic_index.csv"


def test_every_kind():
    kinds = ["arima", "sarima", "sarimax", "rnn", "gru", "lstm", "deepar", "deepfactor"]
    plan = parse_plan(base(models=[{"kind": k} for k in kinds]))
    types = [SarimaxSpec, SarimaSpec, ArimaSpec, RecurrentSpec, DeepArSpec, DeepFactorSpec]
    assert [m.name for m in plan.models] == kinds
    assert type(plan.models[2]) is SarimaxSpec and plan.models[1].m == 5
    assert plan.models[4].cell.kind is CellKind.GRU
    assert all(isinstance(m, tuple(types)) for m in plan.models)


def test_nested_values():
    spec = parse_model({"kind": "lstm", "name": "big", "hidden_size": 64, "num_layers": 2,
                        "train": {"epochs": 5, "learning_rate": 0.01}}, 0)
    assert spec.name == "big" and spec.cell.hidden_size == 64 and spec.train.epochs == 5
    ar = parse_model({"kind": "deepar", "hidden": 10, "likelihood": "student_t", "train": {"epochs": 3}}, 0)
    assert ar.config.hidden == 10 and ar.train.epochs == 3


def test_fractions_sorted():
    assert parse_plan(base(fractions=[0.25, 1, 0.5])).fractions == (1.0, 0.5, 0.25)


@pytest.mark.parametrize("doc, key", [
    (base(colour="red"), "colour"),
    (base(dataset={"path": "x.csv", "sep": ";"}), "dataset.sep"),
    (base(models=[{"kind": "arima", "p": [0, 9]}]), "models[0].p"),
    (base(models=[{"kind": "lstm", "dropout": 0.1}]), "models[0].dropout"),
    (base(models=[{"kind": "lstm", "train": {"momentum": 0.9}}]), "models[0].train.momentum"),
    (base(models=[{"kind": "deepar", "train": {"learning_rate": 0.1}}]), "models[0].train.learning_rate"),
    (base(models=[{"kind": "prophet"}]), "models[0].kind"),
    (base(models=[{"kind": "lstm", "hidden_size": 0}]), "models[0]"),
    (base(models=[{"kind": "arima"}, {"kind": "arima"}]), "models"),
    (base(fractions=[1.5]), "fractions"),
    (base(fractions=[]), "fractions"),
    (base(horizon=0), "horizon"),
    (base(schema_version=2), "schema_version"),
    (base(seed="one"), "seed"),
    (base(models=[]), "models"),
    ({"dataset": {"path": "x"}, "models": [{"kind": "arima"}]}, "schema_version"),
])
def test_rejections_name_the_key(doc, key):
    with pytest.raises(ConfigError) as info:
        parse_plan(doc)
    assert info.value.key == key
    assert str(info.value).startswith(key)


def test_load_toml(tmp_path):
    path = tmp_path / "plan.toml"
    path.write_text('schema_version = 1\nboundary = 2015-06-30\n[dataset]\npath = "prices.csv"\n'
                    '[[models]]\nkind = "gru"\n[models.train]\nepochs = 3\n', encoding="utf-8")
    plan = load_plan(path)
    assert plan.boundary == dt.date(2015, 6, 30)
    assert plan.dataset.resolve() == tmp_path / "prices.csv"
    assert plan.models[0].train.epochs == 3


def test_malformed_toml(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("schema_version = \n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_plan(path)


def test_overrides_revalidate():
    plan = parse_plan(base())
    assert plan.with_overrides(horizon=5, seed=None).horizon == 5
    with pytest.raises(ConfigError):
        plan.with_overrides(fractions=(0.0,))


def test_plan_requires_valid_fields():
    with pytest.raises(ConfigError):
        ExperimentPlan(dataset=None, jobs=0)

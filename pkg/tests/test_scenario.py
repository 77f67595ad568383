import pytest

from momentplan import rv, scenario
from momentplan.scenario import ScenarioError

BASE = """name: a
states: [x]
controls: [u]
dynamics:
  x: x + u
initial: {x: 0}
horizon: 2
delta: 0.1
"""


@pytest.mark.parametrize("name", scenario.bundled_names())
def test_bundled_round_trip(name):
    s = scenario.load(scenario.bundled(name))
    again = scenario.loads(scenario.dumps(s))
    assert scenario.to_document(again) == scenario.to_document(s)
    assert scenario.scenario_hash(again) == scenario.scenario_hash(s)


def test_bundled_corpus_complete():
    assert {"underwater", "aerial", "ground_vehicle", "example1", "example2", "example3"} <= set(
        scenario.bundled_names())


def test_distribution_forms():
    s = scenario.loads(BASE.replace("initial: {x: 0}", "initial: {x: {kind: beta, a: 2, b: 3, support: [-1, 1]}}"))
    assert s.initial["x"] == rv.Beta(2.0, 3.0, -1.0, 1.0)
    s = scenario.loads(BASE)
    assert s.initial["x"] == rv.PointMass(0.0)


@pytest.mark.parametrize("text,line,fragment", [
    (BASE.replace("x: x + u", "x: x + q"), 5, "unknown symbol"),
    (BASE + "bogus: 1\n", 9, "unknown key"),
    (BASE.replace("horizon: 2", "horizon: two"), 7, "horizon"),
    (BASE.replace("initial: {x: 0}", "initial: {x: {kind: cauchy}}"), 6, "cauchy"),
    (BASE + "control_bounds: {u: [1, 0]}\n", 9, "lo <= hi"),
    (BASE + "goal: {polynomial: u^2 - 1}\n", 9, "control"),
])
def test_errors_are_located(text, line, fragment):
    with pytest.raises(ScenarioError) as exc:
        scenario.loads(text, "s.yaml")
    assert exc.value.line == line
    assert fragment in str(exc.value)
    assert str(exc.value).startswith(f"s.yaml:{line}:")


def test_yaml_syntax_error_located():
    with pytest.raises(ScenarioError) as exc:
        scenario.loads("name: [a\n", "bad.yaml")
    assert exc.value.line is not None


def test_hash_changes_with_content():
    a = scenario.loads(BASE)
    b = scenario.loads(BASE.replace("delta: 0.1", "delta: 0.05"))
    assert scenario.scenario_hash(a) != scenario.scenario_hash(b)
    assert len(scenario.scenario_hash(a)) == 16

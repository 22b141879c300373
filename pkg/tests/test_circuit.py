import json
import math

import numpy as np
import pytest

from rfmatch.circuit import (
    Arm,
    CircuitTopology,
    TunableState,
    analytical_match,
    capacitor,
    element_impedance,
    ideal_l_input_impedance,
    ideal_l_topology,
    inductor,
    load_topology,
    parallel_of,
    reference_practical_circuit,
    resistor,
    save_topology,
    series_of,
    simulate,
    simulate_states,
    topology_from_dict,
    topology_to_dict,
    tunable,
)
from rfmatch.errors import CircuitSpecError, NoFeasibleSolutionError, SingularTopologyError
from rfmatch.network import impedance_to_reflection, input_reflection

from _oracles import topology_nodal_s

# exact oracle output of the pinned reference circuit at (1.75 GHz, 5 pF, 5 pF);
# cross-checked against independent nodal analysis (agreement 4e-16) before freezing
GOLDEN_REFERENCE_S = [
    -0.7954334868542782,
    0.3689081863160729,
    -0.054444834388539615,
    -0.4379017528097248,
    -0.054444834388539615,
    -0.4379017528097248,
    -0.8667901460273645,
    -0.13535452765320638,
]


class TestElementImpedance:
    def test_resistor(self):
        assert element_impedance(resistor(50), TunableState(1e9, 1e-12, 1e-12)) == 50 + 0j

    def test_capacitor_reactance(self):
        # at f = 1/(2*pi) GHz, omega*C = 1e-3 for C = 1 pF
        z = element_impedance(capacitor(1e-12), TunableState(1e9 / (2 * math.pi), 0, 0))
        assert z == pytest.approx(-1000j, abs=1e-9)

    def test_parallel_resistors(self):
        z = element_impedance(parallel_of(resistor(50), resistor(50)), TunableState(1e9, 0, 0))
        assert z == pytest.approx(25 + 0j)

    def test_inductor(self):
        z = element_impedance(inductor(1e-9), TunableState(1e9, 0, 0))
        assert z == pytest.approx(1j * 2 * math.pi * 1e9 * 1e-9)

    def test_open_capacitor_raises(self):
        with pytest.raises(SingularTopologyError):
            element_impedance(capacitor(0.0), TunableState(1e9, 0, 0))

    def test_series_combination(self):
        z = element_impedance(series_of(resistor(10), inductor(1e-9)), TunableState(1e9, 0, 0))
        assert z == pytest.approx(10 + 1j * 2 * math.pi)

    def test_tunable_reads_state(self):
        zp = element_impedance(tunable("P"), TunableState(1e9 / (2 * math.pi), 1e-12, 2e-12))
        zs = element_impedance(tunable("S"), TunableState(1e9 / (2 * math.pi), 1e-12, 2e-12))
        assert zp == pytest.approx(-1000j)
        assert zs == pytest.approx(-500j)

    def test_bad_values_rejected(self):
        with pytest.raises(CircuitSpecError):
            resistor(-1.0)
        with pytest.raises(CircuitSpecError):
            series_of(resistor(1))
        with pytest.raises(CircuitSpecError):
            tunable("X")


class TestTopologyValidation:
    def test_reference_validates(self):
        t = reference_practical_circuit()
        assert len(t.arms) == 10
        assert t.band_hz == (1.5e9, 2.0e9)
        assert t.cp_range == (0.0, 10e-12)

    def test_missing_slot_rejected(self):
        with pytest.raises(CircuitSpecError):
            CircuitTopology(
                name="x", band_hz=(1e9, 2e9), cp_range=(0, 1e-12), cs_range=(0, 1e-12),
                arms=(Arm("shunt", tunable("P")), Arm("series", capacitor(1e-12))),
            )

    def test_duplicate_slot_rejected(self):
        with pytest.raises(CircuitSpecError):
            CircuitTopology(
                name="x", band_hz=(1e9, 2e9), cp_range=(0, 1e-12), cs_range=(0, 1e-12),
                arms=(Arm("shunt", tunable("P")), Arm("series", tunable("P")),
                      Arm("series", tunable("S"))),
            )

    def test_empty_arms_rejected(self):
        with pytest.raises(CircuitSpecError):
            CircuitTopology(name="x", band_hz=(1e9, 2e9),
                            cp_range=(0, 1e-12), cs_range=(0, 1e-12), arms=())

    def test_bad_ranges_rejected(self):
        with pytest.raises(CircuitSpecError):
            CircuitTopology(
                name="x", band_hz=(1e9, 2e9), cp_range=(1e-12, 1e-12), cs_range=(0, 1e-12),
                arms=(Arm("shunt", tunable("P")), Arm("series", tunable("S"))),
            )

    def test_file_round_trip(self, tmp_path):
        t = reference_practical_circuit()
        path = str(tmp_path / "c.json")
        save_topology(t, path)
        back = load_topology(path)
        assert back == t
        assert back.fingerprint == t.fingerprint

    def test_malformed_file(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(CircuitSpecError):
            load_topology(str(path))
        path.write_text(json.dumps({"name": "x"}))
        with pytest.raises(CircuitSpecError):
            load_topology(str(path))


class TestSimulate:
    def test_ideal_l_is_lossless_reciprocal(self):
        t = ideal_l_topology()
        s = simulate(t, TunableState(1.75e9, 3e-12, 4e-12))
        assert abs(s.s12 - s.s21) < 1e-12
        assert abs(abs(s.s11) ** 2 + abs(s.s21) ** 2 - 1) < 1e-6

    def test_ideal_cs_zero_singular(self):
        with pytest.raises(SingularTopologyError):
            simulate(ideal_l_topology(), TunableState(1.75e9, 3e-12, 0.0))

    def test_ideal_cp_zero_legal(self):
        s = simulate(ideal_l_topology(), TunableState(1.75e9, 0.0, 4e-12))
        assert abs(abs(s.s11) ** 2 + abs(s.s21) ** 2 - 1) < 1e-6

    def test_reference_regular_across_box_corners(self):
        t = reference_practical_circuit()
        for cp in (0.0, 10e-12):
            for cs in (0.0, 10e-12):
                for f in (1.5e9, 2.0e9):
                    s = simulate(t, TunableState(f, cp, cs))
                    assert np.all(np.isfinite(s.as_real_vector()))

    def test_matches_ideal_formula_via_input_reflection(self):
        # two independent computation paths for the ideal circuit
        rng = np.random.default_rng(12)
        t = ideal_l_topology()
        for _ in range(50):
            f = rng.uniform(1.5e9, 2e9)
            cp = rng.uniform(0, 10e-12)
            cs = rng.uniform(0.2e-12, 10e-12)
            zl = complex(rng.uniform(5, 100), rng.uniform(-100, 100))
            state = TunableState(f, cp, cs)
            direct = impedance_to_reflection(ideal_l_input_impedance(zl, state), 50.0)
            via_s = input_reflection(simulate(t, state), impedance_to_reflection(zl, 50.0))
            assert abs(direct - via_s) < 1e-10

    def test_nodal_oracle_agreement_on_reference(self):
        t = reference_practical_circuit()
        doc = topology_to_dict(t)
        rng = np.random.default_rng(13)
        for _ in range(1000):
            f = rng.uniform(1.5e9, 2e9)
            cp = rng.uniform(0, 10e-12)
            cs = rng.uniform(0, 10e-12)
            s = simulate(t, TunableState(f, cp, cs))
            ref = topology_nodal_s(doc, f, cp, cs)
            for got, want in zip((s.s11, s.s12, s.s21, s.s22), ref):
                assert abs(got - want) <= 1e-9 * max(1.0, abs(want))

    def test_nodal_oracle_agreement_on_ideal(self):
        t = ideal_l_topology()
        doc = topology_to_dict(t)
        rng = np.random.default_rng(23)
        for _ in range(1000):
            f = rng.uniform(1.5e9, 2e9)
            cp = rng.uniform(0, 10e-12)
            cs = rng.uniform(0.1e-12, 10e-12)
            s = simulate(t, TunableState(f, cp, cs))
            ref = topology_nodal_s(doc, f, cp, cs)
            for got, want in zip((s.s11, s.s12, s.s21, s.s22), ref):
                assert abs(got - want) <= 1e-9 * max(1.0, abs(want))

    def test_parasitics_zeroed_reduces_to_ideal(self):
        # strip every parasitic from the reference spec: series-arm R/L -> 0,
        # fixed shunt capacitors -> 0 (open), bypass capacitors -> 0
        doc = topology_to_dict(reference_practical_circuit())

        def strip(node):
            ((kind, val),) = node.items()
            if kind in ("R", "L", "C"):
                return {kind: 0.0}
            if kind == "TUNE":
                return node
            return {kind: [strip(ch) for ch in val]}

        doc["arms"] = [{"orient": a["orient"], "expr": strip(a["expr"])} for a in doc["arms"]]
        stripped = topology_from_dict(doc)
        ideal = ideal_l_topology()
        rng = np.random.default_rng(14)
        for _ in range(30):
            state = TunableState(rng.uniform(1.5e9, 2e9), rng.uniform(0.1e-12, 10e-12),
                                 rng.uniform(0.1e-12, 10e-12))
            a = simulate(stripped, state).as_real_vector()
            b = simulate(ideal, state).as_real_vector()
            assert np.all(np.abs(a - b) < 1e-9)

    def test_golden_reference_vector(self):
        t = reference_practical_circuit()
        got = simulate(t, TunableState(1.75e9, 5e-12, 5e-12)).as_real_vector()
        assert np.allclose(got, GOLDEN_REFERENCE_S, rtol=0, atol=1e-15)
        ref = topology_nodal_s(topology_to_dict(t), 1.75e9, 5e-12, 5e-12)
        want = np.array([x for c in ref for x in (c.real, c.imag)])
        assert np.all(np.abs(got - want) < 1e-9)

    def test_grid_evaluation_matches_scalar(self):
        t = reference_practical_circuit()
        cp = np.linspace(0, 10e-12, 7)
        cs = np.linspace(0, 10e-12, 5)
        s, valid = simulate_states(t, 1.8e9, cp[:, None], cs[None, :])
        assert valid.all()
        for i in (0, 3, 6):
            for j in (0, 2, 4):
                single = simulate(t, TunableState(1.8e9, cp[i], cs[j]))
                assert np.allclose(
                    s[i, j], [single.s11, single.s12, single.s21, single.s22],
                    rtol=0, atol=1e-15,
                )

    def test_continuity_in_capacitance(self):
        t = reference_practical_circuit()
        rng = np.random.default_rng(15)
        for _ in range(20):
            f = rng.uniform(1.5e9, 2e9)
            cp = rng.uniform(0.5e-12, 9.5e-12)
            cs = rng.uniform(0.5e-12, 9.5e-12)
            base, _ = simulate_states(t, f, cp, cs)
            bump, _ = simulate_states(t, f, cp + 1e-18, cs)
            assert np.max(np.abs(np.asarray(base) - np.asarray(bump))) < 1e-6


class TestIdealInputImpedance:
    def test_cp_zero_reduces_to_series_capacitor(self):
        # bs chosen so 1/bs = 50 ohm of capacitive reactance
        f = 1.75e9
        omega = 2 * math.pi * f
        cs = 1.0 / (omega * 50.0)
        zin = ideal_l_input_impedance(50 + 0j, TunableState(f, 0.0, cs))
        assert zin == pytest.approx(50 - 50j, rel=1e-12)

    def test_cs_zero_singular(self):
        with pytest.raises(SingularTopologyError):
            ideal_l_input_impedance(50 + 0j, TunableState(1e9, 1e-12, 0.0))

    def test_rejects_bad_frequency(self):
        with pytest.raises(ValueError):
            ideal_l_input_impedance(50 + 0j, TunableState(0.0, 1e-12, 1e-12))


def matchable_loads(rng, n):
    """Rejection-sample loads the capacitor-only L-network can match:
    rl < r, xl > -sqrt(rl*(r - rl)), and |zl|^2 > rl*r."""
    out = []
    while len(out) < n:
        rl = rng.uniform(0.5, 49.5)
        xl = rng.uniform(-200, 200)
        root = math.sqrt(rl * (50.0 - rl))
        if xl > -root and rl * rl + xl * xl > rl * 50.0:
            out.append(complex(rl, xl))
    return out


class TestAnalyticalMatch:
    def test_worked_example(self):
        pairs = analytical_match(20 + 30j, 1.75e9, 50.0)
        assert len(pairs) == 1
        assert pairs[0].branch == "+"
        assert pairs[0].cp == pytest.approx(2.2277e-12, rel=1e-4)
        assert pairs[0].cs == pytest.approx(16.5203e-12, rel=1e-4)

    def test_purely_resistive_small_load_infeasible(self):
        with pytest.raises(NoFeasibleSolutionError):
            analytical_match(20 + 0j, 1.75e9, 50.0)

    def test_already_matched_load_degenerate(self):
        with pytest.raises(NoFeasibleSolutionError):
            analytical_match(50 + 0j, 1.75e9, 50.0)

    def test_matched_resistance_reactive_load_limit_solution(self):
        # rl == r: the feasible branch degenerates to cp = 0, cs = 1/(w*xl)
        pairs = analytical_match(50 + 40j, 1.75e9, 50.0)
        assert any(p.cp == 0.0 for p in pairs)
        zin = ideal_l_input_impedance(50 + 40j, TunableState(1.75e9, pairs[0].cp, pairs[0].cs))
        assert abs(zin - 50.0) < 1e-6 * 50.0

    def test_soundness_on_random_matchable_loads(self):
        rng = np.random.default_rng(16)
        for zl in matchable_loads(rng, 300):
            f = rng.uniform(1.5e9, 2e9)
            pairs = analytical_match(zl, f, 50.0)
            assert pairs, zl
            for p in pairs:
                zin = ideal_l_input_impedance(zl, TunableState(f, p.cp, p.cs))
                gin = impedance_to_reflection(zin, 50.0)
                assert abs(gin) < 1e-9

    def test_forbidden_region_always_errors(self):
        rng = np.random.default_rng(17)
        for _ in range(1000):
            zl = complex(rng.uniform(50.0 + 1e-6, 500), rng.uniform(-200, 200))
            with pytest.raises(NoFeasibleSolutionError):
                analytical_match(zl, rng.uniform(1.5e9, 2e9), 50.0)

    def test_rejects_nonpassive_load(self):
        with pytest.raises(ValueError):
            analytical_match(-5 + 10j, 1e9, 50.0)

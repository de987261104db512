"""Quick end-to-end check of the `nll` Python module on a coarse grid."""

import math
import tempfile

import nll


def main():
    p = nll.MaterialParams()
    assert abs(p.a + p.b**2 / (3 * p.c)) < 1e-9
    assert abs(p.s_plus - p.b / p.c) < 1e-12

    g = nll.Grid(n=33, rho=0.2)
    bd, it = nll.newton_solve(nll.initial_state(g, p, "bd"), p)
    info = bd.classify(p)
    print(f"BD at rho={g.rho}: energy {bd.energy(p):.4f}, {it} iterations, label {info['label']}")
    assert info["label"] == "BD"
    assert bd.residual(p) < 1e-6 * p.lambda_bar_sq * p.s_plus

    wors, _ = nll.newton_solve(nll.initial_state(g, p, "wors"), p, symmetric=True)
    rep = {e["subspace"]: e["verdict"] for e in nll.stability_report(wors, p)}
    print("WORS stability:", rep)
    assert rep["V2"] == "unstable"

    c = nll.transition_costs(p)
    print("costs:", ", ".join(f"{x:.4f}" for x in c))
    assert c[0] < c[1] < c[2] < c[3]
    rho = 1 - math.sqrt(2) / 2
    assert abs(nll.j_inf("WORS", rho, c) - nll.j_inf("BD", rho, c)) < 1e-9

    with tempfile.TemporaryDirectory() as d:
        s = nll.run_campaign(f'[geometry]\nn = 33\n[campaign]\nkind = "solve"\nic = "bd"\n[output]\ndirectory = "{d}"\n')
        assert s["label"] == "BD"
    print("smoke test passed")


if __name__ == "__main__":
    main()

"""Quick check of the installed extension: analysis, reduction and one artifact run."""

import json
import math
import sys
import tempfile

import ssmctl


def main():
    assert "pendulum-fig3" in ssmctl.presets()
    cfg = json.loads(ssmctl.preset_config("pendulum-fig3"))

    analysis = json.loads(ssmctl.analyze(json.dumps(cfg)))
    assert analysis["spectral_quotient"] == 122, analysis["spectral_quotient"]

    model = ssmctl.Model(json.dumps(cfg), [0.0] * 6)
    q = [0.01]
    x = model.lift(q, 0.0)
    back = model.project(x)
    assert abs(back[0] - q[0]) < 1e-9, back
    assert model.residual(q, 0.0) < 1e-6
    assert math.isclose(model.omega, math.pi)

    try:
        ssmctl.analyze('{"bogus": 1}')
    except ssmctl.SsmctlError as e:
        assert json.loads(str(e))["stage"] == "config"
    else:
        raise AssertionError("bad config accepted")

    cfg["controller_params"] = [0.0] * 6
    with tempfile.TemporaryDirectory() as out:
        run_dir, summary = ssmctl.run("reduce", json.dumps(cfg), out)
        print("reduce ->", run_dir, json.loads(summary))
    print("smoke test ok, version", ssmctl.__version__)
    return 0


if __name__ == "__main__":
    sys.exit(main())

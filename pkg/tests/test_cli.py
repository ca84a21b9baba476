import io
import json
import math
import subprocess
import sys
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from stokeskit.cli import run
from stokeskit.formal import FormalType, make_item
from stokeskit.parsing import parse_factor
from stokeskit.stokesdata import make_structure, matrix_to_json, trivializations_from

SVG = "{http://www.w3.org/2000/svg}"


def call(*argv):
    buf = io.StringIO()
    code = run(list(argv), stdout=buf)
    return code, json.loads(buf.getvalue())


def two_factor():
    return FormalType(tuple(make_item(parse_factor(f), 1, [0]) for f in ("0", "1/x")), 1)


def test_lines_example():
    code, rep = call("lines", "--delta", "1/x")
    assert code == 0
    assert rep["results"] == {"directions": [1.5707963268, 4.7123889804], "exact": ["pi/2", "3pi/2"]}
    assert rep["command"] == "lines" and rep["inputs"]["delta"] == "1/x"
    assert "version" in rep


def test_formal_example():
    code, rep = call("formal", "--op", "x^3*D+1")
    assert code == 0
    (item,) = rep["results"]["items"]
    assert item["factor"] == "1/2*x^-2" and item["rank"] == 1
    assert rep["results"]["slopes"] == ["2"]


def test_formal_system_input():
    code, rep = call("formal", "--system", '[["-x^-3", "0"], ["0", "0"]]')
    assert code == 0
    assert sorted(i["factor"] for i in rep["results"]["items"]) == ["0", "1/2*x^-2"]


def test_phi_table():
    code, rep = call("phi", "--factor", "1/x")
    assert code == 0
    res = rep["results"]
    assert res == {
        "H0": [{"stratum": "sublevel", "sheaf": "C_{Re(t+phi)<?}, phi = x^-1", "rank": 1, "phi": "x^-1"}],
        "H1": [{"stratum": "x=0,t!=inf", "sheaf": "C_{x=0, t!=inf}", "rank": 1},
               {"stratum": "x!=0,t=inf", "sheaf": "C_{x!=0, t=inf}", "rank": 1}],
        "otherwise": 0,
    }


def test_homshape_with_negative_angles():
    code, rep = call("homshape", "--factors", "1/x,0", "--sector", "-pi/4,pi/4")
    assert code == 0
    assert rep["results"] == {"n": 2, "allowed": [[1, 1], [2, 2], [2, 1]], "tag": "lower-like"}


def test_negative_expression_values():
    code, rep = call("lines", "--delta", "-1/x")
    assert code == 0 and rep["results"]["exact"] == ["pi/2", "3pi/2"]


def test_sectors():
    code, rep = call("sectors", "--factors", "1/x,0")
    assert code == 0
    assert rep["results"]["exact"] == ["pi/2", "3pi/2"]
    assert len(rep["results"]["sectors"]) == 2 and len(rep["results"]["overlaps"]) == 2


def test_glue_and_extract_round_trip(tmp_path):
    a, b = 0.5 + 1j, -2.0
    S = make_structure(two_factor(), [np.array([[1, 0], [a, 1]]), np.array([[1, b], [0, 1]])])
    path = tmp_path / "s.json"
    path.write_text(json.dumps(S.to_json()))
    code, rep = call("glue", "--structure", str(path))
    assert code == 0 and rep["results"]["valid"]
    trivs, closing = trivializations_from(S)
    cover = {"formal": S.formal.to_json(), "trivializations": [matrix_to_json(t.matrix) for t in trivs],
             "closing": matrix_to_json(closing)}
    code, rep2 = call("extract", "--cover", json.dumps(cover))
    assert code == 0
    code, rep3 = call("glue", "--structure", json.dumps(rep2["results"]))
    assert code == 0
    assert np.allclose(rep3["results"]["charpoly"], rep["results"]["charpoly"])


def test_stokes_and_monodromy_agree():
    code, rep = call("stokes", "--op", "x^5*D^2 - 1")
    assert code == 0
    assert len(rep["results"]["matrices"]) == 3
    assert rep["diagnostics"]["off_shape"] < 1e-7
    code, mono = call("monodromy", "--op", "x^5*D^2 - 1", "--rho", "0.5")
    assert code == 0
    M = np.array([[complex(*z) for z in row] for row in rep["results"]["monodromy"]])
    tr = np.trace(M)
    assert mono["results"]["charpoly"][1] == pytest.approx([-tr.real, -tr.imag], abs=1e-6)


# -- exit codes ---------------------------------------------------------------------

def test_parse_error_exit_2():
    code, rep = call("lines", "--delta", "1/x +")
    assert code == 2 and rep["error"]["kind"] == "parse"


def test_unknown_flag_exit_2(capsys):
    assert run(["lines", "--delta", "1/x", "--bogus"], stdout=io.StringIO()) == 2
    assert "usage" in capsys.readouterr().err


def test_math_error_exit_3():
    code, rep = call("lines", "--delta", "3 + x")
    assert code == 3 and rep["error"]["kind"] == "math"


def test_validation_failure_exit_4():
    S = make_structure(two_factor(), [np.array([[1, 2], [0, 1]]), np.array([[1, 1], [0, 1]])])
    code, rep = call("glue", "--structure", json.dumps(S.to_json()))
    assert code == 4
    assert rep["error"]["violations"][0]["matrix"] == 1


def test_malformed_json_exit_2():
    assert call("glue", "--structure", "{not json")[0] == 2
    assert call("extract", "--cover", "{}")[0] == 2


# -- SVG ------------------------------------------------------------------------------

@pytest.mark.parametrize("delta", ["1/x - 1", "(0+1*i)*x^-2 + x^-1 + 2*x", "x^-3"])
def test_svg_curves_and_rays(tmp_path, delta):
    out = tmp_path / "c.svg"
    code, rep = call("curves", "--delta", delta, "--rho-min", "1e-4", "--rho-max", "0.1", "--svg", str(out))
    assert code == 0
    root = ET.parse(out).getroot()
    assert root.get("version") == "1.1"
    assert [float(v) for v in root.get("viewBox").split()] == pytest.approx([-0.1, -0.1, 0.2, 0.2])
    polylines = root.findall(f"{SVG}polyline")
    rays = root.findall(f"{SVG}line")
    lines = rep["results"]["directions"]
    assert len(polylines) == len(rep["results"]["curves"]) == len(lines)
    assert len(rays) == len(lines)
    for ray, th in zip(rays, lines):
        x2, y2 = float(ray.get("x2")), -float(ray.get("y2"))
        assert abs(math.remainder(math.atan2(y2, x2) - th, 2 * math.pi)) < 1e-9
    for poly in polylines:
        pts = [tuple(map(float, p.split(","))) for p in poly.get("points").split()]
        x, y = pts[0][0], -pts[0][1]
        assert math.hypot(x, y) == pytest.approx(1e-4, rel=1e-9)
        ang = math.atan2(y, x)
        gap = min(abs(math.remainder(ang - th, 2 * math.pi)) for th in lines)
        assert gap < 1e-3


def test_curves_without_svg_file():
    code, rep = call("curves", "--delta", "1/x - 1")
    assert code == 0 and rep["results"]["svg"] is None


# -- determinism ----------------------------------------------------------------------

@pytest.mark.parametrize("argv", [["lines", "--delta", "(1+2*i)*x^-3"],
                                  ["curves", "--delta", "1/x - 1", "--points", "20"],
                                  ["stokes", "--op", "x^3*D^2 + D - 1"],
                                  ["monodromy", "--op", "x^5*D^2 - 1", "--rho", "0.4"]])
def test_reports_are_bit_reproducible(argv):
    outs = []
    for _ in range(2):
        buf = io.StringIO()
        run(["--seed", "7"] + argv, stdout=buf)
        outs.append(buf.getvalue())
    assert outs[0] == outs[1]


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "stokeskit.cli", "lines", "--delta", "x^-2"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["results"]["exact"] == ["pi/4", "3pi/4", "5pi/4", "7pi/4"]

from pathlib import Path

import pytest

from daecc.ir import print_function, print_program
from daecc.kernels import load
from daecc.pipeline import compile_function
from daecc.verify import GenParams, gen_program

GOLDEN = Path(__file__).parent / "golden"


@pytest.mark.parametrize("name", ["fig5", "fig6", "fig3", "fig1b", "hist"])
def test_pipeline_golden(name):
    c = compile_function(load(name).function())
    text = print_function(c.pair.agu) + "\n" + print_function(c.pair.cu) + "\n; spec " + c.smap.dumps().replace("\n", " ") + "\n"
    assert text == (GOLDEN / f"{name}.ir").read_text()


def test_generator_golden():
    text = print_program(gen_program(GenParams(seed=42, max_depth=3)))
    assert text == (GOLDEN / "gen_seed42_depth3.ir").read_text()

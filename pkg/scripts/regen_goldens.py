"""Rewrite tests/golden/ from the current pipeline. Review the diff before committing."""

from pathlib import Path

from daecc.ir import print_function, print_program
from daecc.kernels import load
from daecc.pipeline import compile_function
from daecc.verify import GenParams, gen_program

OUT = Path(__file__).resolve().parents[1] / "tests" / "golden"
KERNELS = ("fig5", "fig6", "fig3", "fig1b", "hist")


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for name in KERNELS:
        c = compile_function(load(name).function())
        text = print_function(c.pair.agu) + "\n" + print_function(c.pair.cu) + "\n; spec " + c.smap.dumps().replace("\n", " ") + "\n"
        (OUT / f"{name}.ir").write_text(text)
    (OUT / "gen_seed42_depth3.ir").write_text(print_program(gen_program(GenParams(seed=42, max_depth=3))))
    print("wrote", sorted(p.name for p in OUT.iterdir()))


if __name__ == "__main__":
    main()

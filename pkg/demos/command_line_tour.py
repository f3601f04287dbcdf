"""The command-line workflow end to end, driven from Python.

Writes a tiny star-shaped dataset (one hub user with ten friends, one hub
item with ten correlated items) as raw TSV files, then runs ``prepare``,
``train``, ``evaluate`` and ``export-attention`` in a temporary directory and
prints what each step left behind. The same commands work from a shell via
the ``socialrec`` entry point.

    python demos/command_line_tour.py
"""

import tempfile
from pathlib import Path

from socialrec.cli import main
from socialrec.model import read_attention
from socialrec.synthetic import star_fixture

root = Path(tempfile.mkdtemp())
ds = star_fixture(10)
(root / "ratings.tsv").write_text(
    "".join(f"u{r.user}\ti{r.item}\t{r.rating}\t{r.timestamp}\n" for r in ds.interactions))
(root / "trust.tsv").write_text(
    "".join(f"u{a}\tu{b}\n" for a, nb in enumerate(ds.social_adj) for b in nb if a < b))

wd = root / "run"
common = ["--workdir", str(wd), "--d", "8", "--corr_k", "10"]
main(["prepare", "--interactions_path", str(root / "ratings.tsv"), "--social_path", str(root / "trust.tsv"),
      *common])
print("prepared:", sorted(p.name for p in wd.iterdir()))

main(["train", *common, "--epochs", "5", "--seed", "1"])
print((wd / "report.tsv").read_text())

main(["evaluate", *common, "--split", "val"])

out = wd / "attention.tsv"
main(["export-attention", *common, "--user", "u0", "--item", "i0", "--out", str(out)])
for (block, target), rows in sorted(read_attention(out).items()):
    weights = ", ".join(f"{n}:{w:.3f}" for n, w in rows)
    print(f"{block} target {target}: {weights}")

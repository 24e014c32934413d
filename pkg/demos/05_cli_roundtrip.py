"""End-to-end use through the command line: synthesise, inpaint, evaluate.

Equivalent shell commands are printed as they run.
"""
import subprocess
import sys
import tempfile
from pathlib import Path

d = Path(tempfile.mkdtemp(prefix="strav-demo-"))
steps = [
    ["synth", "--suite", "two-texture", "--seed", "2", "--size", "64", "--out", str(d / "seq")],
    ["inpaint", "--frames", str(d / "seq/frames"), "--masks", str(d / "seq/masks"), "--out", str(d / "out"),
     "--gt", str(d / "seq/gt")],
    ["eval", "--a", str(d / "out"), "--b", str(d / "seq/gt"), "--region", str(d / "seq/masks")],
    ["eval-losses", "--frames", str(d / "seq/frames"), "--masks", str(d / "seq/masks"), "--gt", str(d / "seq/gt"),
     "--outputs", str(d / "out")],
]
for args in steps:
    print("$ strav", " ".join(args))
    out = subprocess.run([sys.executable, "-m", "strav", *args], check=True, capture_output=True, text=True).stdout
    print(out.strip() or "(no output)")
print("metrics.csv:", (d / "out/metrics.csv").read_text().splitlines()[:3])

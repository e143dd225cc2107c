"""Type-check the bundled corpus and show what a rejection looks like.

Run with ``python3 demos/01_check_and_diagnose.py``.
"""

from safegpu import CORPUS_DIR
from safegpu.syntax import parse
from safegpu.typechecker import check_program

for path in sorted(CORPUS_DIR.glob("*.desc")):
    result = check_program(parse(path.read_text()))
    codes = [d.code for d in result.diagnostics] or ["ok"]
    print(f"{path.stem:24} {' '.join(codes)}")

# The racy reversal: every thread writes its own element but reads its
# mirror, so thread 0 reads what thread 31 writes in the same step.
path = CORPUS_DIR / "reject_rev_per_block.desc"
source = path.read_text()
print()
for d in check_program(parse(source)).diagnostics:
    print(d.render(source, path.name))

# Inserting a barrier between the read and the write makes it safe.
fixed = source.replace("arr[[thread]] = arr.rev[[thread]]",
                       "let v = arr.rev[[thread]]; sync; arr[[thread]] = v")
print("\nwith a barrier:", check_program(parse(fixed)).diagnostics or "accepted")

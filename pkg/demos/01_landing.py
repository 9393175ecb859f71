"""A landing request with several possible answers.

The mission asks for a landing, then waits. The module doing the work may
accept and finish, or reject, or accept and then fail. Each answer arrives as
a sample and only the nodes watching that key wake up.
"""

from pathlib import Path

from abtm.dsl import load_tree

TEXT = (Path(__file__).parent / "landing.abtm").read_text()

tree = load_tree(TEXT)
print("start            ->", tree.start())

for sample in ({"altitude": 40.0}, {"land_started": 1}, {"altitude": 12.5}, {"landed": 1}):
    out = tree.callback(sample)
    print(f"{sample!s:20} -> {out}  root={tree.root.state.name}  ticks={tree.last_pops}")

# Same mission, different ending: the module rejects the request.
tree = load_tree(TEXT)
tree.start()
for sample in ({"land_started": -1}, {"landed": -1}):
    out = tree.callback(sample)
    print(f"{sample!s:20} -> {out}  root={tree.root.state.name}")

"""Pipeline automata: the JSON wire schema, validation, and switch logic.

Pipelines are finite automata of tool invocations. The two built-in
demonstration documents (also used to prompt consolidation) show a linear
pipeline and one with switch logic: a node with two outgoing edges for the
success and recovery continuations.
"""

import json

from ice.consolidate import DEMONSTRATIONS
from ice.pipeline import dumps_pipeline, pipeline_to_dict, validate_document

linear, switch = (d.pipeline for d in DEMONSTRATIONS)

print("linear document:")
print(dumps_pipeline(linear))

for pipeline in (linear, switch):
    violations = validate_document(pipeline_to_dict(pipeline))
    print(f"{pipeline.pipeline_name!r}: {len(pipeline.nodes)} nodes, "
          f"{len(pipeline.edges)} edges, violations: {violations or 'none'}")

# The switch node: out-degree 2, comments tell the executor when to take
# which continuation.
print("\nswitch point:")
for edge in switch.outgoing("product_detail"):
    print(f"  -> {edge.to_node}: {edge.comments[0][:80]}...")

# Break the document on purpose; the validator names the broken aspect.
broken = pipeline_to_dict(switch)
broken["edges"][2]["to_node"] = "no_such_node"
del broken["nodes"][1]  # drop the End node
print("\nviolations after two mutations:")
for violation in validate_document(broken):
    print(f"  {violation.rule} [{violation.subject}]: {violation.detail}")

# Serialization is canonical, so documents round-trip byte-identically.
text = dumps_pipeline(linear)
assert json.loads(text) == pipeline_to_dict(linear)
print("\nround-trip: byte-identical =", dumps_pipeline(linear) == text)

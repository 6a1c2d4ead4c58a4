"""How ratings, attainment and purchases move modules up the browse order."""

from socketstore import ModuleDescriptor, Rating, Registry

reg = Registry()
for key in ("fast", "steady", "new"):
    reg.publish_module(ModuleDescriptor.from_dict({
        "module_key": key,
        "contributor": "ana",
        "objective": {"metric": "end_to_end_latency_ms", "bound": 30, "direction": "at_most"},
        "network_behavior": {"behavior_id": "relay", "params": {}},
        "parameterizations": {f"{key}.default": {}},
    }), "ana")
    reg.review_module(key, "accept")

reg.rate_module("fast", Rating("bo", 5))
for ok in (True, True, False):
    reg.record_sample("fast", ok)
for _ in range(4):
    reg.purchase("app", "steady")
reg.record_sample("steady", True)

for key, score in reg.rank_modules():
    print(f"{key:<8} {score:.4f}")

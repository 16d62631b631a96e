import json
import sys

json.load(sys.stdin)
print(json.dumps({"map_50_95": 1.5, "latency_ms": 20.0}))

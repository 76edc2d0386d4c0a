"""A toy external agent speaking the bridge protocol on stdin/stdout.

It walks toward the farthest offered candidate and stops after a few
decisions. Plug it into a batch with

    vlnsim run --mode no-map --agent "bridge:cmd:python3 demos/bridge_agent.py" ...
"""
from vlnsim.bridge import serve_stdio

MAX_STEPS = 4


def decide(req):
    cands = req["candidates"]
    if req["step"] >= MAX_STEPS or not cands:
        return {"stop": True}
    far = max(range(len(cands)), key=lambda i: cands[i]["range"])
    return {"choice": far}


if __name__ == "__main__":
    serve_stdio(decide)

"""Random policy graphs for closure and override properties."""
import numpy as np

from policygate.policy_graph import PolicyGraph, PolicyNode


def cu_attrs(subject="controller", refs=()):
    return {"subject": subject, "condition": None, "constraint": ["shall act"], "context": None,
            "char_span": {"subject": None, "condition": None, "constraint": None, "context": None},
            "references": list(refs)}


def random_policy(rng: np.random.Generator, max_nodes: int = 30) -> PolicyGraph:
    """Document -> articles -> points -> CUs with random REFERS edges (cycles allowed)."""
    g = PolicyGraph()
    root = "DOC:T"
    g.add_node(PolicyNode(root, "structure", "T", {"kind": "document"}, "document"))
    budget = int(rng.integers(3, max_nodes + 1)) - 1
    holders: list[str] = []
    cus: list[str] = []
    art = 0
    while budget > 0:
        art += 1
        aid = f"{root}/ARTICLE:{art}"
        g.add_node(PolicyNode(aid, "structure", f"Article {art}", {"kind": "article", "number": str(art)}, "article"))
        g.add_edge("CONTAIN", root, aid)
        budget -= 1
        holders.append(aid)
        for p in range(int(rng.integers(0, 3))):
            if budget <= 0:
                break
            pid = f"{aid}/POINT:{p + 1}"
            g.add_node(PolicyNode(pid, "structure", str(p + 1), {"kind": "point", "text": "x"}, "point"))
            g.add_edge("CONTAIN", aid, pid)
            budget -= 1
            holders.append(pid)
        for _ in range(int(rng.integers(0, 3))):
            if budget <= 0:
                break
            parent = holders[int(rng.integers(len(holders)))]
            cid = f"{parent}/CU:{len(cus)}"
            g.add_node(PolicyNode(cid, "compliance_unit", cid, cu_attrs(f"s{len(cus)}"),
                                  "meta_cu" if rng.random() < 0.2 else "actor_cu"))
            g.add_edge("DERIVES", parent, cid)
            cus.append(cid)
            budget -= 1
    targets = holders + cus
    for cid in cus:
        for _ in range(int(rng.integers(0, 3))):
            dst = targets[int(rng.integers(len(targets)))]
            if dst != cid:
                g.add_edge("REFERS", cid, dst)
    return g

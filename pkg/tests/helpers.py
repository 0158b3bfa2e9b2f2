"""Shared test fixtures: a synthetic problem with a fully known search tree and
a scripted driver for task trees."""
import random
import struct

from semicentral.problem import Branch, ProblemAdapter
from semicentral.tasktree import STOLEN, NodeState, TaskTree


class SyntheticTree(ProblemAdapter):
    """Branching problem whose tree is fixed by a seed; no pruning at all.

    Instance = (node id, depth). Leaves are solutions whose value is derived
    from the id, so every node must be visited to find the optimum.
    """

    explore_after_solution = False

    def __init__(self, seed=0, max_b=3, max_depth=6, leaf_chance=0.25):
        self.seed = seed
        self.max_branching_factor = max_b
        self.max_depth = max_depth
        self.leaf_chance = leaf_chance

    def _rng(self, ident):
        return random.Random(hash((self.seed, ident)))

    def kids(self, inst):
        ident, depth = inst
        rng = self._rng(ident)
        if depth >= self.max_depth or rng.random() < self.leaf_chance:
            return []
        k = rng.randint(1, self.max_branching_factor)
        return [(ident * 8 + i + 1, depth + 1) for i in range(k)]

    def value(self, inst):
        return self._rng(inst[0] + 7).randint(0, 10**6)

    def branch(self, inst, best_value):
        ch = self.kids(inst)
        if not ch:
            return Branch(solution=inst)
        return Branch(children=ch)

    def root(self):
        return (0, 0)

    def serialize(self, inst):
        return struct.pack("<QI", *inst)

    def deserialize(self, data):
        return struct.unpack("<QI", data)

    def priority(self, inst):
        return self.max_depth - inst[1]

    def solution_value(self, sol):
        return self.value(sol)

    def serialize_solution(self, sol):
        return self.serialize(sol)

    def deserialize_solution(self, data):
        return self.deserialize(data)

    def enumerate(self):
        """(node count, best value) of the whole tree."""
        count, best, stack = 0, None, [self.root()]
        while stack:
            inst = stack.pop()
            count += 1
            ch = self.kids(inst)
            if not ch:
                v = self.value(inst)
                best = v if best is None else min(best, v)
            stack.extend(ch)
        return count, best


def naive_front(tree: TaskTree):
    """Minimum-depth pending leaf (leftmost in preorder) by scanning the whole tree.

    The root is never extractable: after rerooting a lone pending task can
    become the root, and it then belongs to the owning thread.
    """
    best = None
    for node in tree.walk():
        if node is tree.root:
            continue
        if node.state is NodeState.PENDING and not node.children:
            if best is None or node.depth < best.depth:
                best = node
    return best


class ScriptedRecursion:
    """Drives a TaskTree the way one exploration thread does, one action at a time.

    ``take()`` plays the communication loop stealing the front task.
    """

    def __init__(self, adapter, tree=None):
        self.adapter = adapter
        self.tree = tree or TaskTree(priority=adapter.priority)
        self.stack = []
        self.explored = []
        self.extracted = []
        self.created = 0

    def start(self, inst):
        self.created += 1
        node = self.tree.add_root(inst)
        self.stack.append([node, inst, None, 0])

    def step(self):
        if not self.stack:
            return False
        frame = self.stack[-1]
        node, inst, children, nxt = frame
        if children is None:
            self.explored.append(inst)
            kids = self.adapter.kids(inst)
            frame[2] = self.tree.register_child_instances(kids, node)
            self.created += len(kids)
            return True
        if nxt < len(children):
            frame[3] += 1
            got = self.tree.begin_search(children[nxt])
            if got is not STOLEN:
                self.stack.append([children[nxt], got, None, 0])
            return True
        self.stack.pop()
        self.tree.complete(node)
        return True

    def take(self):
        inst = self.tree.take_highest_priority()
        if inst is not None:
            self.extracted.append(inst)
        return inst


class DictTree(ProblemAdapter):
    """Explicit tree: ``kids[name]`` lists children; leaves carry ``values[name]``."""

    def __init__(self, kids, values=None, max_b=3):
        self.kids = kids
        self.values = values or {}
        self.max_branching_factor = max_b

    def branch(self, inst, best_value):
        ch = self.kids.get(inst, [])
        if ch:
            return Branch(children=list(ch))
        return Branch(solution=inst)

    def serialize(self, inst):
        return inst.encode()

    def deserialize(self, data):
        return data.decode()

    def priority(self, inst):
        return -len(inst)

    def solution_value(self, sol):
        return self.values.get(sol, 100)

    def serialize_solution(self, sol):
        return sol.encode()

    def deserialize_solution(self, data):
        return data.decode()


class Recorder:
    """Stand-in endpoint that records what a worker sends."""

    def __init__(self, rank=1, inbox=()):
        self.rank = rank
        self.nranks = 16
        self.inbox = list(inbox)
        self.sent = []

    def try_receive(self):
        return self.inbox.pop(0) if self.inbox else None

    def send_async(self, dest, tag, payload=b""):
        self.sent.append((dest, tag, payload))

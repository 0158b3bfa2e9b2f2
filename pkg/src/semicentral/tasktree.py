"""Per-thread tree of registered, not yet explored sub-instances.

The internal nodes are the recursion path the owning thread is currently
exploring (state ``EXPLORING``); every other node is a ``PENDING`` leaf
waiting to be explored locally or handed to someone else. The tree is
therefore a caterpillar and holds at most ``max_b`` nodes per level.
"""
from __future__ import annotations

import enum
import threading
from typing import Any, Callable, Iterable


class InvalidHandle(LookupError):
    """The node behind a handle has already left the tree."""


class TreeContractError(RuntimeError):
    pass


class NodeState(enum.Enum):
    PENDING = "pending"
    EXPLORING = "exploring"


class TaskNode:
    __slots__ = ("instance", "depth", "state", "children", "parent", "alive")

    def __init__(self, instance: Any, depth: int, parent: TaskNode | None):
        self.instance = instance
        self.depth = depth
        self.state = NodeState.PENDING
        self.children: list[TaskNode] = []
        self.parent = parent
        self.alive = True

    def __repr__(self) -> str:
        return f"TaskNode(depth={self.depth}, {self.state.value}, children={len(self.children)})"


class Stolen:
    """Returned by :meth:`TaskTree.begin_search` when the task was handed off."""

    def __repr__(self) -> str:
        return "Stolen"


STOLEN = Stolen()


class TaskTree:
    """Caterpillar task tree with O(max_b) extraction of the top-priority task.

    All public methods take the tree lock, so the owning exploration thread
    and a communication loop may call them concurrently. Handles are the
    :class:`TaskNode` objects themselves; a node that left the tree has
    ``alive == False`` and is never dereferenced again.
    """

    def __init__(self, priority: Callable[[Any], int] | None = None):
        self.root: TaskNode | None = None
        self.node_count = 0
        self.priority = priority
        self._lock = threading.RLock()

    def __len__(self) -> int:
        return self.node_count

    def __bool__(self) -> bool:
        return True

    def add_root(self, instance: Any) -> TaskNode:
        """Install ``instance`` as the root of an empty tree, already exploring."""
        with self._lock:
            if self.root is not None:
                raise TreeContractError("tree already has a root")
            node = TaskNode(instance, 0, None)
            node.state = NodeState.EXPLORING
            self.root = node
            self.node_count = 1
            return node

    def register_child_instances(self, children: Iterable[Any], parent: TaskNode) -> list[TaskNode]:
        with self._lock:
            if not parent.alive:
                raise InvalidHandle("parent already left the task tree")
            nodes = [TaskNode(c, parent.depth + 1, parent) for c in children]
            parent.children.extend(nodes)
            self.node_count += len(nodes)
            return nodes

    def begin_search(self, node: TaskNode):
        """Mark ``node`` exploring and return its instance, or ``STOLEN``."""
        with self._lock:
            if not node.alive:
                return STOLEN
            node.state = NodeState.EXPLORING
            return node.instance

    def complete(self, node: TaskNode) -> None:
        """Remove a finished node.

        A node dropped earlier by rerooting (it had become a one-child root)
        is already gone; completing it is a no-op.
        """
        with self._lock:
            if not node.alive:
                return
            if node.children:
                raise TreeContractError("cannot complete a node that still has children")
            if node.state is not NodeState.EXPLORING:
                raise TreeContractError("only an exploring node can be completed")
            self._detach(node)

    def _detach(self, node: TaskNode) -> None:
        node.alive = False
        self.node_count -= 1
        parent = node.parent
        if parent is None:
            self.root = None
        else:
            parent.children.remove(node)
            node.parent = None

    def _reroot(self) -> TaskNode | None:
        r = self.root
        while r is not None and len(r.children) == 1:
            q = r.children[0]
            r.alive = False
            r.children.clear()
            self.node_count -= 1
            q.parent = None
            self.root = r = q
        return r

    def _front(self) -> TaskNode | None:
        r = self._reroot()
        if r is None or not r.children:
            return None
        for child in r.children:
            if child.state is NodeState.PENDING and not child.children:
                return child
        return None

    def take_highest_priority(self):
        """Detach and return the shallowest, leftmost pending task, or None."""
        with self._lock:
            node = self._front()
            if node is None:
                return None
            self._detach(node)
            return node.instance

    def highest_pending_size(self) -> int | None:
        with self._lock:
            node = self._front()
            if node is None:
                return None
            return self.priority(node.instance) if self.priority else node.depth

    def has_pending(self) -> bool:
        with self._lock:
            return self._front() is not None

    def is_empty(self) -> bool:
        return self.root is None

    # ---- inspection helpers (tests, assertions)

    def walk(self) -> list[TaskNode]:
        with self._lock:
            out, stack = [], [self.root] if self.root else []
            while stack:
                node = stack.pop()
                out.append(node)
                stack.extend(reversed(node.children))
            return out

    def is_caterpillar(self) -> bool:
        for node in self.walk():
            if sum(1 for c in node.children if c.children) > 1:
                return False
            if node.children and node.state is not NodeState.EXPLORING:
                return False
        return True

    def exploring_depth(self) -> int:
        """Number of exploring nodes on the path hanging from the root."""
        with self._lock:
            d, node = 0, self.root
            while node is not None and node.state is NodeState.EXPLORING:
                d += 1
                node = next((c for c in node.children if c.state is NodeState.EXPLORING), None)
            return d

"""Benchmark-shaped service graphs.

Each generator returns the service list, directed caller->callee ground
truth and the bootstrap service. Node and edge counts match the three
microservice benchmarks; the media graph has a main component plus three
components unreachable from it.
"""

from __future__ import annotations

BOUTIQUE = "boutique"
SOCIAL = "social"
MEDIA = "media"
BENCHMARKS = (BOUTIQUE, SOCIAL, MEDIA)

_BOUTIQUE_EDGES = [
    ("loadgenerator", "frontend"),
    ("frontend", "ad"),
    ("frontend", "recommendation"),
    ("frontend", "productcatalog"),
    ("frontend", "cart"),
    ("frontend", "shipping"),
    ("frontend", "currency"),
    ("frontend", "checkout"),
    ("checkout", "productcatalog"),
    ("checkout", "cart"),
    ("checkout", "shipping"),
    ("checkout", "currency"),
    ("checkout", "payment"),
    ("checkout", "email"),
    ("recommendation", "productcatalog"),
    ("cart", "redis-cart"),
]

_SOCIAL_EDGES = [
    ("nginx-thrift", "compose-post"),
    ("nginx-thrift", "user"),
    ("nginx-thrift", "home-timeline"),
    ("nginx-thrift", "user-timeline"),
    ("nginx-thrift", "social-graph"),
    ("compose-post", "text"),
    ("compose-post", "media"),
    ("compose-post", "unique-id"),
    ("compose-post", "post-storage"),
    ("compose-post", "user-timeline"),
    ("compose-post", "write-home-timeline"),
    ("text", "url-shorten"),
    ("text", "user-mention"),
    ("write-home-timeline", "social-graph"),
    ("write-home-timeline", "home-timeline-redis"),
    ("home-timeline", "home-timeline-redis"),
    ("home-timeline", "post-storage"),
    ("user-timeline", "user-timeline-mongodb"),
    ("user-timeline", "user-timeline-redis"),
    ("user-timeline", "post-storage"),
    ("post-storage", "post-storage-mongodb"),
    ("post-storage", "post-storage-memcached"),
    ("social-graph", "social-graph-mongodb"),
    ("social-graph", "social-graph-redis"),
    ("user", "user-mongodb"),
]

_MEDIA_MAIN_EDGES = [
    ("nginx-web", "compose-review"),
    ("nginx-web", "user"),
    ("nginx-web", "movie-id"),
    ("nginx-web", "text"),
    ("compose-review", "text"),
    ("compose-review", "user"),
    ("compose-review", "unique-id"),
    ("compose-review", "movie-id"),
    ("compose-review", "review-storage"),
    ("compose-review", "user-review"),
    ("compose-review", "movie-review"),
    ("movie-id", "rating"),
    ("movie-id", "movie-id-mongodb"),
    ("movie-id", "movie-id-memcached"),
    ("rating", "rating-redis"),
    ("rating", "compose-review"),
    ("user", "user-mongodb"),
    ("user", "user-memcached"),
    ("review-storage", "review-storage-mongodb"),
    ("review-storage", "review-storage-memcached"),
    ("user-review", "user-review-mongodb"),
    ("user-review", "review-storage"),
    ("movie-review", "movie-review-mongodb"),
    ("movie-review", "review-storage"),
]

_MEDIA_ISLANDS = [
    [
        ("cast-info-api", "cast-info"),
        ("cast-info", "cast-info-mongodb"),
        ("cast-info", "cast-info-memcached"),
        ("cast-info-api", "cast-info-memcached"),
    ],
    [
        ("movie-info-api", "movie-info"),
        ("movie-info", "movie-info-mongodb"),
        ("movie-info-api", "movie-info-mongodb"),
    ],
    [
        ("plot-api", "plot"),
        ("plot", "plot-mongodb"),
        ("plot-api", "plot-mongodb"),
    ],
]


def benchmark_edges(kind: str) -> list[tuple[str, str]]:
    if kind == BOUTIQUE:
        return list(_BOUTIQUE_EDGES)
    if kind == SOCIAL:
        return list(_SOCIAL_EDGES)
    if kind == MEDIA:
        return list(_MEDIA_MAIN_EDGES) + [e for island in _MEDIA_ISLANDS for e in island]
    raise ValueError(f"unknown benchmark {kind!r}; expected one of {BENCHMARKS}")


def benchmark_bootstrap(kind: str) -> str:
    return {BOUTIQUE: "frontend", SOCIAL: "nginx-thrift", MEDIA: "text"}[kind]


def _nodes_in_order(edges: list[tuple[str, str]]) -> list[str]:
    seen: dict[str, None] = {}
    for a, b in edges:
        seen.setdefault(a)
        seen.setdefault(b)
    return list(seen)


def host_names(count: int) -> list[str]:
    if count < 1:
        raise ValueError("host count must be at least 1")
    return [f"h{i + 1}" for i in range(count)]


def generate_benchmark(kind: str, hosts: int = 3, *, prefix: str = "") -> dict:
    """Scenario fragment: hosts, services placed round-robin, ground truth, bootstrap."""
    edges = [(prefix + a, prefix + b) for a, b in benchmark_edges(kind)]
    names = host_names(hosts)
    services = [{"name": n, "host": names[i % hosts]} for i, n in enumerate(_nodes_in_order(edges))]
    return {
        "benchmark": kind,
        "hosts": names,
        "services": services,
        "ground_truth": [list(e) for e in edges],
        "bootstrap": [prefix + benchmark_bootstrap(kind)],
    }

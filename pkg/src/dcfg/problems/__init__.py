"""Problem suites built on the hybrid solver: registration, robust PGO, semantic SLAM."""

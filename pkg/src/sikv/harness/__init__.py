"""File I/O, synthetic workloads, benchmark runners and the CLI."""

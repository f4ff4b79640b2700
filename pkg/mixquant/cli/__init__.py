"""CLI: the `mixquant` command line."""

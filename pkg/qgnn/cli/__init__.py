"""Command-line surface: argument parsing and the subcommand handlers."""

from semflow.cli import entry

entry()

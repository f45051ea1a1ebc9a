from gardenctl.cli import entry

entry()

# main.py
# Entry point: `python main.py <command> ...` runs the confsel command-line interface.

from confsel.cli.main import run

if __name__ == "__main__":
    run()

"""Write the built-in default scenario as a scenario file."""

import os
import sys

from dotenv import load_dotenv

from skyjam.scenario import default_paper_scenario, dump_scenario

load_dotenv()


def default_scenario(path: str):
    period = float(os.environ.get("SKYJAM_PERIOD", "100"))
    with open(path, "w", encoding="utf-8") as f:
        f.write(dump_scenario(default_paper_scenario(period=period)))
    print(f"  wrote {path} (T={period:g} s)")


if __name__ == "__main__":
    default_scenario(sys.argv[1] if len(sys.argv) > 1 else "scenarios/paper_default.json")

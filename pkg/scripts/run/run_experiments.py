#!/usr/bin/env python3
"""
Run both desk-scale experiments through the symlab CLI
"""

import os
import subprocess
import sys


def run_experiments(profile_suffix: str = "default"):
    """Run the blackbody and pendulum experiments with the given profile suffix"""
    print("🔬 symmetry-lab experiments")
    print("=" * 40)

    repo_dir = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
    env = dict(os.environ)
    env["PYTHONPATH"] = os.path.join(repo_dir, "src") + os.pathsep + env.get("PYTHONPATH", "")

    failures = 0
    for experiment in ("blackbody", "pendulum"):
        print(f"🚀 Running {experiment} ({experiment}_{profile_suffix})...")
        cmd = [
            sys.executable,
            "-m",
            "cli.app",
            "exp",
            experiment,
            "--profile",
            f"{experiment}_{profile_suffix}",
            "--out",
            os.path.join("output", f"{experiment}_report.json"),
            "--svg",
            os.path.join("output", f"{experiment}.svg"),
            "--xlsx",
            os.path.join("output", f"{experiment}.xlsx"),
        ]
        try:
            subprocess.run(cmd, cwd=repo_dir, env=env, check=True)
        except KeyboardInterrupt:
            print("\n👋 Stopped")
            return 1
        except subprocess.CalledProcessError as e:
            print(f"❌ {experiment} failed with exit code {e.returncode}")
            failures += 1
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(run_experiments(sys.argv[1] if len(sys.argv) > 1 else "default"))

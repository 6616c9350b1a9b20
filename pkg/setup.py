#!/usr/bin/env python3
"""
JoinSketch Setup Script
Installs dependencies, creates working directories, initializes the run
ledger and writes a starter config.json
"""

import json
import os
import subprocess
import sys


def print_banner():
    """Print JoinSketch banner"""
    print("""
    ╔══════════════════════════════════════════════════════════════╗
    ║                      📐 JOINSKETCH SETUP 📐                  ║
    ║                                                              ║
    ║     Sketching and regression over joins, no materializing    ║
    ╚══════════════════════════════════════════════════════════════╝
    """)


def check_python_version():
    """Check if Python version is compatible"""
    if sys.version_info < (3, 9):
        print("❌ Error: Python 3.9 or higher is required!")
        print(f"Current version: {sys.version}")
        return False
    print(f"✅ Python version: {sys.version}")
    return True


def install_dependencies():
    """Install required dependencies"""
    print("\n📦 Installing dependencies...")
    try:
        subprocess.check_call([sys.executable, "-m", "pip", "install", "-r", "requirements.txt"])
        print("✅ Dependencies installed successfully!")
        return True
    except subprocess.CalledProcessError as e:
        print(f"❌ Error installing dependencies: {e}")
        return False


def create_directories():
    """Create necessary directories"""
    print("\n📁 Creating directories...")
    for directory in ["reports", "logs", "data"]:
        os.makedirs(directory, exist_ok=True)
        print(f"✅ Created directory: {directory}")
    return True


def initialize_ledger(path: str):
    """Create the SQLite run ledger"""
    print("\n🗄️ Initializing run ledger...")
    try:
        from modules.run_ledger import RunLedger
        RunLedger(path)
        print(f"✅ Run ledger ready at {path}")
        return True
    except Exception as e:
        print(f"❌ Error initializing run ledger: {e}")
        return False


def _ask(prompt: str, default=None):
    shown = f" [{default}]" if default not in (None, "", []) else ""
    answer = input(f"   {prompt}{shown}: ").strip()
    return answer or default


def configure_run():
    """Ask for the tables and regression problem and save config.json"""
    from modules.config import ALGORITHMS, DEFAULT_CONFIG, load_config, save_config

    print("\n⚙️ Run Configuration")
    print("Point JoinSketch at your CSV tables; leave blank to keep the current value.")

    config = load_config("config.json")

    print("\n1. Tables (space separated CSV paths, or name=path):")
    tables = _ask("Tables", " ".join(t["path"] if isinstance(t, dict) else t for t in config["tables"]))
    if tables:
        entries = []
        for item in tables.split():
            name, sep, path = item.partition("=")
            entries.append({"name": name, "path": path} if sep else {"path": item})
        config["tables"] = entries

    print("\n2. Regression problem:")
    features = _ask("Feature columns (space separated)", " ".join(config["features"]))
    if features:
        config["features"] = features.split()
    config["target"] = _ask("Target column", config["target"])

    print(f"\n3. Algorithm ({', '.join(ALGORITHMS)}):")
    algorithm = _ask("Algorithm", config["algorithm"])
    if algorithm not in ALGORITHMS:
        print(f"⚠️ Unknown algorithm {algorithm!r}; keeping {DEFAULT_CONFIG['algorithm']}")
        algorithm = DEFAULT_CONFIG["algorithm"]
    config["algorithm"] = algorithm
    try:
        config["epsilon"] = float(_ask("Epsilon", config["epsilon"]))
    except ValueError:
        print("⚠️ Epsilon must be a number; keeping the default")
        config["epsilon"] = DEFAULT_CONFIG["epsilon"]

    save_config(config)
    print("✅ Configuration saved!")
    return config


def test_installation(ledger_path: str):
    """Test the installation"""
    print("\n🧪 Testing installation...")
    try:
        import numpy
        import pandas
        import scipy
        import dotenv
        print("✅ All modules imported successfully!")

        from modules.run_ledger import RunLedger
        RunLedger(ledger_path).get_stats()
        print("✅ Run ledger connection successful!")

        with open('config.json', 'r') as f:
            json.load(f)
        print("✅ Configuration loaded successfully!")
        return True
    except Exception as e:
        print(f"❌ Installation test failed: {e}")
        return False


def print_next_steps():
    """Print next steps for the user"""
    print("""
    🎉 SETUP COMPLETE!

    Next steps:
    1. Generate sample data: python main.py synth --out data --n 10000 --m 2
    2. Regress over a join:  python main.py regress --tables data/t0.csv data/t1.csv
    3. Check the exact gram: python main.py gram --tables data/t0.csv data/t1.csv
    4. Sweep the sketch size: python main.py bench --kind k

    Reports land in reports/, every run is recorded in the ledger, and
    python main.py history shows what ran.

    For details, check the README.md file.
    """)


def main():
    """Main setup function"""
    print_banner()

    if not check_python_version():
        return False

    if not install_dependencies():
        return False

    if not create_directories():
        return False

    config = configure_run()
    ledger = config["ledger"] or "joinsketch_runs.db"

    if not initialize_ledger(ledger):
        return False

    if not test_installation(ledger):
        return False

    print_next_steps()
    return True


if __name__ == "__main__" and len(sys.argv) > 1:
    # Invoked by a build tool (pip / setuptools commands): package metadata lives in pyproject.toml
    from setuptools import setup
    setup()
elif __name__ == "__main__":
    try:
        success = main()
        if success:
            print("\n✅ Setup completed successfully!")
        else:
            print("\n❌ Setup failed. Please check the errors above.")
    except KeyboardInterrupt:
        print("\n\n⚠️ Setup interrupted by user.")
    except Exception as e:
        print(f"\n❌ Unexpected error during setup: {e}")

# -*- coding: utf-8 -*-
import datetime
import json
import os
import re
import shutil
import subprocess
import sys
from pathlib import Path
from tempfile import mkstemp

from invoke import Collection, task


def query_yes_no(question, default="yes"):
    """Ask a yes/no question via input() and return the answer as a bool"""
    valid = {"yes": True, "y": True, "ye": True, "no": False, "n": False}
    prompts = {None: " [y/n] ", "yes": " [Y/n] ", "no": " [y/N] "}
    if default not in prompts:
        raise ValueError(f"invalid default answer: '{default}'")

    while True:
        sys.stdout.write(question + prompts[default])
        choice = input().lower()
        if default is not None and choice == "":
            return valid[default]
        if choice in valid:
            return valid[choice]
        sys.stdout.write("Please respond with 'yes' or 'no' (or 'y' or 'n').\n")


def get_version(c):
    with open(c.version_file_raw, "r") as f:
        return f.readline().strip()


def _replace(file_path, regex, subst):
    fh, abs_path = mkstemp()
    with open(fh, "w", encoding="utf-8") as new_file:
        with open(file_path, encoding="utf-8") as old_file:
            for line in old_file:
                new_file.write(regex.sub(subst, line))
    os.remove(file_path)
    shutil.move(abs_path, file_path)


###############################################################################
# Versioning
###############################################################################


@task(help={"v": "Version to set", "tag": "Also set tag"})
def set_version(c, v=None, tag=False):
    if not v:
        v = get_version(c)
        print(f"No version specified, retaining version {v} but updating the release date")
    elif not re.match("[0-9]+([.][0-9]+)+", v):
        print("Must specify a valid version (example: 0.3.1)")
        return
    else:
        print(f"Setting version to {v} in {c.version_file_raw}")
        with open(c.version_file_raw, "w") as f:
            f.write(v)

        print(f"Setting version to {v} in setup.py")
        setup_regex = re.compile("^([ ]*version=[ ]*['\"])[0-9]+([.][0-9]+)+(rc[0-9]*)?")
        _replace("setup.py", setup_regex, r"\g<1>" + v)

    release_date = datetime.datetime.now(datetime.timezone.utc).strftime("%Y/%m/%d %H:%M:%SZ")
    print(f"Writing {c.version_file_details}")
    with open(c.version_file_details, "w") as f:
        json.dump({"version": v, "release_date": release_date}, f, indent=4)

    if tag:
        set_tag(c)


@task()
def set_tag(c):
    v = get_version(c)
    ret = subprocess.run(["git", "diff-index", "HEAD", "--"], capture_output=True, text=True)
    if ret.stdout != "":
        if query_yes_no("Uncommitted changes exist in repository. Commit these?"):
            ret = subprocess.run(["git", "commit", "-m", f"Updating version tags for v{v}"])
            ret.check_returncode()
        else:
            print("Changes not committed - VERSION TAG NOT SET")
            return

    print(f"Tagging version {v} and pushing tag to origin")
    ret = subprocess.run(["git", "tag", "-l", f"v{v}"], capture_output=True, text=True)
    ret.check_returncode()
    if f"v{v}" in ret.stdout:
        ret = subprocess.run(["git", "push", "origin", "--delete", f"v{v}"])
        if ret.returncode == 0:
            print(f"Deleted tag v{v} on origin")
    subprocess.check_call(["git", "tag", "-f", "-a", f"v{v}", "-m", f"Version {v}"])
    subprocess.check_call(["git", "push", "origin", f"v{v}"])


###############################################################################
# Tests and generated problems
###############################################################################


@task(help={"coverage": "Collect branch coverage while testing"})
def test(c, coverage=False):
    if coverage:
        c.run("coverage run -m pytest")
        c.run("coverage report")
    else:
        c.run("pytest")


@task(help={"out": "Directory for the generated problem files"})
def gen_corpus(c, out="build/corpus"):
    """Compile every machine spec under tests/data into problem files"""
    Path(out).mkdir(parents=True, exist_ok=True)
    variants = {
        ".ca": [("ca", "", "ca"), ("ca", "--mdl", "mdl")],
        ".tm": [("tm", "", "tm")],
        ".tiling": [("tiling", "--mode cq", "cq"), ("tiling", "--mode ucq", "ucq")],
    }
    for spec in sorted(Path(c.data_dir).iterdir()):
        for kind, flags, suffix in variants.get(spec.suffix, []):
            target = Path(out) / f"{spec.stem}_{suffix}.mdp"
            print(f"Generating {target}")
            c.run(f"viewdet gen {kind} {spec} {flags} -o {target}")


###############################################################################
# Options
###############################################################################

ns = Collection(set_version, set_tag, test, gen_corpus)

ns.configure(
    {
        "version_file_raw": "version.txt",
        "version_file_details": "viewdet/version.json",
        "data_dir": "tests/data",
    }
)

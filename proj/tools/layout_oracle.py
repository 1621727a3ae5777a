#!/usr/bin/env python3
"""Regenerate the frozen struct-layout reference files.

Reads data/structs/corpus.defs, renders it as C, and asks clang for the
record layout under each target ABI. The resulting offset tables are written
to data/structs/expected/<abi>.offsets and are committed; the test suite
checks the layout engine against them, so this script only needs to run again
when the corpus changes.

Usage: tools/layout_oracle.py [--clang clang] [--out data/structs/expected]
"""

import argparse
import os
import re
import subprocess
import sys
import tempfile

TARGETS = {
    "x86_64": "x86_64-linux-gnu",
    "i386": "i386-linux-gnu",
    "armv7_eabi": "armv7-linux-gnueabi",
}

C_TYPES = {
    "u8": "unsigned char",
    "u16": "unsigned short",
    "u32": "unsigned int",
    "u64": "unsigned long long",
    "i8": "signed char",
    "i16": "short",
    "i32": "int",
    "i64": "long long",
    "long": "long",
    "ulong": "unsigned long",
    "ptr": "void*",
    # Fixed-byte-order wire fields share the layout of their unsigned carriers.
    "be16": "unsigned short",
    "be32": "unsigned int",
}


def parse_defs(path):
    structs = []
    cur = None
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            m = re.match(r"\[struct\s+(\w+)\]", line)
            if m:
                cur = (m.group(1), [])
                structs.append(cur)
                continue
            parts = line.split()
            name, ty = parts[0], parts[1]
            count = int(parts[2]) if len(parts) > 2 else 1
            cur[1].append((name, ty, count))
    return structs


def render_c(structs):
    out = []
    for sname, fields in structs:
        out.append(f"struct {sname} {{")
        for fname, ty, count in fields:
            cty = C_TYPES[ty]
            suffix = f"[{count}]" if count > 1 else ""
            out.append(f"  {cty} {fname}{suffix};")
        out.append("};")
        out.append(f"struct {sname} _keep_{sname};")
    return "\n".join(out) + "\n"


def dump_layouts(clang, triple, c_path):
    cmd = [
        clang, "-target", triple, "-fsyntax-only",
        "-Xclang", "-fdump-record-layouts-complete", c_path,
    ]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        sys.exit(f"clang failed for {triple}:\n{proc.stderr}")
    return proc.stdout


def parse_layouts(dump, structs):
    # Record layout dumps look like:
    #          0 | struct s02_byte_ptr
    #          0 |   unsigned char a
    #          8 |   void * p
    #            | [sizeof=16, align=8 ...]
    layouts = {}
    cur_name = None
    cur_fields = []
    field_iter = None
    for line in dump.splitlines():
        m = re.match(r"\s*0 \| struct (\w+)$", line)
        if m:
            cur_name = m.group(1)
            cur_fields = []
            known = {s[0]: s[1] for s in structs}
            field_iter = list(known.get(cur_name, []))
            continue
        if cur_name is None:
            continue
        m = re.match(r"\s*(\d+) \|\s+(.+\S)\s*$", line)
        if m and not m.group(2).startswith("struct "):
            cur_fields.append(int(m.group(1)))
            continue
        m = re.search(r"\[sizeof=(\d+),.*align=(\d+)", line)
        if m:
            layouts[cur_name] = {
                "offsets": cur_fields,
                "size": int(m.group(1)),
                "align": int(m.group(2)),
            }
            cur_name = None
    return layouts


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--clang", default="clang")
    ap.add_argument("--defs", default="data/structs/corpus.defs")
    ap.add_argument("--out", default="data/structs/expected")
    args = ap.parse_args()

    structs = parse_defs(args.defs)
    c_src = render_c(structs)
    os.makedirs(args.out, exist_ok=True)

    with tempfile.NamedTemporaryFile("w", suffix=".c", delete=False) as fh:
        fh.write(c_src)
        c_path = fh.name
    try:
        for abi, triple in TARGETS.items():
            dump = dump_layouts(args.clang, triple, c_path)
            layouts = parse_layouts(dump, structs)
            path = os.path.join(args.out, f"{abi}.offsets")
            with open(path, "w") as out:
                out.write(f"# {abi}: field offsets from clang -target {triple}"
                          " -fdump-record-layouts\n")
                for sname, fields in structs:
                    lay = layouts[sname]
                    if len(lay["offsets"]) != len(fields):
                        sys.exit(f"field count mismatch for {sname} on {abi}")
                    out.write(f"[struct {sname}]\n")
                    for (fname, _, _), off in zip(fields, lay["offsets"]):
                        out.write(f"{fname} {off}\n")
                    out.write(f"__size {lay['size']}\n")
                    out.write(f"__align {lay['align']}\n")
            print(f"wrote {path}")
    finally:
        os.unlink(c_path)


if __name__ == "__main__":
    main()

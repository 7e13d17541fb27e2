"""Reference block-span walker built on CPython's ``ast`` module.

Regenerate the frozen spans with:

    python3 oracle/python_ast_spans.py > oracle/expected_spans.json

run from ``crates/core/tests/fixtures``. Conventions mirrored from the
segmenter: an ``elif`` is part of its parent conditional rather than a
block of its own, decorators belong to the function they decorate, and
depth counts enclosing blocks of the four kinds only.
"""

import ast
import json
import os
import sys

KINDS = {
    ast.If: "if",
    ast.For: "for",
    ast.AsyncFor: "for",
    ast.While: "while",
    ast.FunctionDef: "function",
    ast.AsyncFunctionDef: "function",
}


def is_elif(node, lines):
    line = lines[node.lineno - 1]
    return line[node.col_offset :].startswith("elif")


def walk(source):
    lines = source.split("\n")
    tree = ast.parse(source)
    out = []

    def visit(node, depth):
        kind = KINDS.get(type(node))
        child_depth = depth
        if kind is not None and not (kind == "if" and is_elif(node, lines)):
            start = node.lineno
            decorators = getattr(node, "decorator_list", [])
            if decorators:
                start = min(d.lineno for d in decorators)
            out.append(
                {"kind": kind, "start_line": start, "end_line": node.end_lineno, "depth": depth}
            )
            child_depth = depth + 1
        for child in ast.iter_child_nodes(node):
            visit(child, child_depth)

    visit(tree, 0)
    out.sort(key=lambda b: (b["start_line"], -b["end_line"]))
    return out


def main():
    result = {}
    for name in sorted(os.listdir("snippets")):
        if name.endswith(".py"):
            with open(os.path.join("snippets", name)) as fh:
                result["snippets/" + name] = walk(fh.read())
    for task in sorted(os.listdir("apps")):
        with open(os.path.join("apps", task, "solutions.json")) as fh:
            for idx, src in enumerate(json.load(fh)):
                result["apps/%s/%d" % (task, idx)] = walk(src)
    json.dump(result, sys.stdout, indent=1, sort_keys=True)
    sys.stdout.write("\n")


if __name__ == "__main__":
    main()

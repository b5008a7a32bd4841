# EVOLVE-BLOCK-START
"""Pipeline configuration seed: rotate option by module position."""

PICK_INDEX = 'rotate'


def configure_pipeline(modules):
    choices = {}
    # Sorted module order: JSON object key order is not meaningful.
    for index, module in enumerate(sorted(modules)):
        options = modules[module]
        if PICK_INDEX == "rotate":
            choices[module] = options[index % len(options)]
        else:
            choices[module] = options[PICK_INDEX]
    return choices


# EVOLVE-BLOCK-END


def run_pipeline(modules):
    return configure_pipeline(modules)

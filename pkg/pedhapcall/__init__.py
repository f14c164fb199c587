# __init__.py

# The model API lives in the genotype_model subpackage, e.g.
# from pedhapcall.genotype_model import fit, call_dataset

__version__ = "0.1.0"

# Sphinx configuration for the UWARM docs.
# https://www.sphinx-doc.org/en/master/usage/configuration.html
import os
import sys

# autodoc imports uwarm_py from the repository root
py_src_path = os.path.abspath('../../')
print("Python proj src path: %s" % py_src_path)
sys.path.insert(0, py_src_path)

project = 'UWARM'
copyright = '2025, UT Battelle LLC'
release = '0.0.1'

extensions = [
        'sphinx.ext.autodoc',
        'sphinx.ext.napoleon',
        'sphinx.ext.mathjax',
        'sphinx_autodoc_typehints',
]
source_suffix = {'.rst': 'restructuredtext'}
master_doc = 'index'

autodoc_member_order = 'bysource'
# optional plotting extra
autodoc_mock_imports = ['matplotlib']

templates_path = ['_templates']
# study scripts, not API
exclude_patterns = ['../../uwarm_py/progression']

html_theme = 'alabaster'
html_title = 'UWARM: underwater arm control'
html_static_path = ['_static']

latex_elements = {
    'extraclassoptions': 'openany,oneside',
    'preamble': r'\usepackage{enumitem}\setlistdepth{99}',
}

import os
from importlib.metadata import PackageNotFoundError
from importlib.metadata import version as dist_version

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.mathjax',
    'sphinx.ext.napoleon',
    'sphinx.ext.viewcode',
]
source_suffix = '.rst'
master_doc = 'index'
project = 'cinembed'
author = 'cinembed developers'
copyright = '2026, cinembed developers'
try:
    version = release = dist_version('cinembed')
except PackageNotFoundError:
    version = release = '0.1.0'

autodoc_member_order = 'bysource'
autodoc_mock_imports = ['sklearn', 'joblib', 'threadpoolctl']

if os.environ.get('READTHEDOCS') != 'True':
    html_theme = 'sphinx_rtd_theme'
html_short_title = f'{project}-{version}'

napoleon_use_ivar = True
napoleon_use_rtype = False

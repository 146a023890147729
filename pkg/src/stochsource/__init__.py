"""Two-stage reconstruction of random-source statistics from boundary wave data.

Stage one inverts multi-frequency boundary measurements of a randomly driven
Helmholtz field into source-statistics images with a regularized block
Kaczmarz scheme on boundary-kernel matrices.  Stage two refines those images
with linear models fitted on paired datasets (principal-component regression
and a best-fit linear snapshot operator).  Neural refinement lives in a
separate package that talks to this one only through the dataset files.
"""

__version__ = "0.1.0"

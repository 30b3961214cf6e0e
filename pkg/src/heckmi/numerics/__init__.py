from .linalg import nearest_psd, projection_distance, solve_spd, unvech, vech
from .optimize import MinimizeResult, fd_gradient, fd_hessian, minimize
from .rng import (
    RngStream,
    draw_bernoulli,
    draw_bvn_skew_t,
    draw_chisq,
    draw_mvnormal,
    draw_normal,
)
from .special import (
    bvn_cdf,
    bvn_pdf,
    fisher_z,
    fisher_z_inv,
    inverse_mills,
    std_normal_cdf,
    std_normal_logcdf,
    std_normal_pdf,
    std_normal_quantile,
)

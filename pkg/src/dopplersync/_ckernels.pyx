# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot loops in ``_pykernels`` and ``pf._filter_python``.

Random draws go through NumPy's C distribution functions on the caller's bit
generator, in the same order as the Python path, so both backends consume the
same stream.
"""

import numpy as np
cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport atan2, atanh, ceil, cos, exp, fmod, hypot, log, log1p, sin, sqrt, tanh, INFINITY, M_PI
from numpy.random cimport bitgen_t
from numpy.random.c_distributions cimport (
    random_beta,
    random_standard_uniform,
    random_uniform,
    random_vonmises,
)

cnp.import_array()

cdef double TWO_PI = 2.0 * M_PI
cdef double LOGE2 = 0.6931471805599453
cdef double VAR_CLAMP = 0.999
cdef double VAR_FLOOR = 1e-12
cdef double MEAN_EPS = 1e-9
cdef double RESULTANT_MIN = 1e-12


# ------------------------------------------------------------------ LDPC


def bp_decode(const double[::1] llr, const cnp.int64_t[::1] row_ptr,
              const cnp.int64_t[::1] edge_col, int max_iters, double clip):
    cdef Py_ssize_t n = llr.shape[0]
    cdef Py_ssize_t m = row_ptr.shape[0] - 1
    cdef Py_ssize_t n_edges = row_ptr[m]
    cdef Py_ssize_t i, e, a, b, v
    cdef int it = 0, parity
    cdef bint ok = False
    cdef double x, p, prod
    c2v_arr = np.zeros(n_edges)
    t_arr = np.empty(n_edges)
    acc_arr = np.empty(n)
    total_arr = np.array(llr, dtype=np.float64, copy=True)
    cdef double[::1] c2v = c2v_arr
    cdef double[::1] t = t_arr
    cdef double[::1] acc = acc_arr
    cdef double[::1] total = total_arr

    for it in range(1, max_iters + 1):
        for e in range(n_edges):
            v = edge_col[e]
            if it == 1:
                x = llr[v]
            else:
                x = total[v] - c2v[e]
                if x > clip:
                    x = clip
                elif x < -clip:
                    x = -clip
            t[e] = tanh(0.5 * x)
        for i in range(m):
            a = row_ptr[i]
            b = row_ptr[i + 1]
            p = 1.0
            for e in range(a, b):
                c2v[e] = p
                p = p * t[e]
            p = 1.0
            for e in range(b - 1, a - 1, -1):
                prod = c2v[e] * p
                p = p * t[e]
                x = 2.0 * atanh(prod)
                if x > clip:
                    x = clip
                elif x < -clip:
                    x = -clip
                c2v[e] = x
        for v in range(n):
            acc[v] = 0.0
        for e in range(n_edges):
            acc[edge_col[e]] += c2v[e]
        for v in range(n):
            total[v] = llr[v] + acc[v]
        ok = True
        for i in range(m):
            parity = 0
            for e in range(row_ptr[i], row_ptr[i + 1]):
                if total[edge_col[e]] < 0:
                    parity ^= 1
            if parity:
                ok = False
                break
        if ok:
            break
    return total_arr, it, ok


# ------------------------------------------------------------------ phase grid


# kernel entries below this fraction of their row maximum are skipped
cdef double BAND_TOL = 1e-20


cdef Py_ssize_t band_halfwidth(const double[:, ::1] kernel) nogil:
    """Largest circular distance from the diagonal holding a non-negligible entry."""
    cdef Py_ssize_t nq = kernel.shape[0]
    cdef Py_ssize_t j, d, hw = 0
    cdef double top
    for j in range(nq):
        top = 0.0
        for d in range(nq):
            if kernel[j, d] > top:
                top = kernel[j, d]
        for d in range(1, nq // 2 + 1):
            if d > hw and (kernel[j, (j + d) % nq] >= BAND_TOL * top
                           or kernel[j, (j - d + nq) % nq] >= BAND_TOL * top):
                hw = d
    return hw


def forward_backward(const double[:, ::1] local, const double[:, ::1] kernel):
    cdef Py_ssize_t L = local.shape[0]
    cdef Py_ssize_t nq = local.shape[1]
    cdef Py_ssize_t k, l, j, d, lo, hi
    cdef double s, acc
    cdef int bad = 0
    fwd_arr = np.empty((L, nq))
    bwd_arr = np.empty((L, nq))
    post_arr = np.empty((L, nq))
    tmp_arr = np.empty(nq)
    cdef double[:, ::1] fwd = fwd_arr
    cdef double[:, ::1] bwd = bwd_arr
    cdef double[:, ::1] post = post_arr
    cdef double[::1] tmp = tmp_arr
    cdef double u = 1.0 / nq
    cdef Py_ssize_t hw = band_halfwidth(kernel)
    cdef bint dense = 2 * hw + 1 >= nq
    if dense:
        lo, hi = 0, nq - 1
    else:
        lo, hi = -hw, hw

    for l in range(nq):
        fwd[0, l] = u
        bwd[L - 1, l] = u
    for k in range(1, L):
        for j in range(nq):
            tmp[j] = fwd[k - 1, j] * local[k - 1, j]
        s = 0.0
        for l in range(nq):
            acc = 0.0
            for d in range(lo, hi + 1):
                j = (l + d + nq) % nq
                acc += tmp[j] * kernel[j, l]
            fwd[k, l] = acc
            s += acc
        if s > 0.0 and s < INFINITY:
            for l in range(nq):
                fwd[k, l] /= s
        else:
            bad += 1
            for l in range(nq):
                fwd[k, l] = u
    for k in range(L - 2, -1, -1):
        for j in range(nq):
            tmp[j] = bwd[k + 1, j] * local[k + 1, j]
        s = 0.0
        for l in range(nq):
            acc = 0.0
            for d in range(lo, hi + 1):
                j = (l + d + nq) % nq
                acc += kernel[l, j] * tmp[j]
            bwd[k, l] = acc
            s += acc
        if s > 0.0 and s < INFINITY:
            for l in range(nq):
                bwd[k, l] /= s
        else:
            bad += 1
            for l in range(nq):
                bwd[k, l] = u
    for k in range(L):
        s = 0.0
        for l in range(nq):
            post[k, l] = local[k, l] * fwd[k, l] * bwd[k, l]
            s += post[k, l]
        if s > 0.0:
            for l in range(nq):
                post[k, l] /= s
        else:
            bad += 1
            for l in range(nq):
                post[k, l] = u
    return fwd_arr, bwd_arr, post_arr, bad


# ------------------------------------------------------------------ particle filter


cdef inline double wrap(double x) nogil:
    cdef double r = fmod(M_PI - x, TWO_PI)
    if r < 0.0:
        r += TWO_PI
    return M_PI - r


cdef inline double logaddexp(double x, double y) nogil:
    cdef double d
    if x == y:
        return x + LOGE2
    d = x - y
    if d > 0.0:
        return x + log1p(exp(-d))
    elif d <= 0.0:
        return y + log1p(exp(d))
    return x + y


cdef double kappa_from_resultant(double r, double cap) nogil:
    cdef double k, den
    if r < 0.53:
        k = 2.0 * r + r * r * r + 5.0 * r ** 5 / 6.0
    elif r < 0.85:
        k = -0.4 + 1.39 * r + 0.43 / (1.0 - r)
    else:
        den = r * r * r - 4.0 * r * r + 3.0 * r
        if den <= 0.0:
            k = cap
        else:
            k = 1.0 / den
    return k if k < cap else cap


cdef bint beta_shape(double mean, double var, double* u, double* v) nogil:
    cdef double m = mean, top, floor, c
    cdef bint clamped = False
    if m < MEAN_EPS:
        m = MEAN_EPS
    if m > 1.0 - MEAN_EPS:
        m = 1.0 - MEAN_EPS
    top = m * (1.0 - m)
    if var >= top:
        var = VAR_CLAMP * top
        clamped = True
    floor = VAR_FLOOR * top
    if var < floor:
        var = floor
    c = top / var - 1.0
    u[0] = m * c
    v[0] = (1.0 - m) * c
    return clamped


cdef void circular_mean(double[::1] theta, double[::1] w, Py_ssize_t n,
                        double* mu, double* r) nogil:
    cdef double c = 0.0, s = 0.0
    cdef Py_ssize_t i
    for i in range(n):
        c += w[i] * cos(theta[i])
        s += w[i] * sin(theta[i])
    mu[0] = atan2(s, c)
    r[0] = hypot(c, s)


cdef void weighted_moments(double[::1] x, double[::1] w, Py_ssize_t n, double hw,
                           double* mean, double* var) nogil:
    cdef double mu = 0.0, acc = 0.0, d
    cdef Py_ssize_t i
    for i in range(n):
        mu += w[i] * ((x[i] + hw) / (2.0 * hw))
    for i in range(n):
        d = (x[i] + hw) / (2.0 * hw) - mu
        acc += w[i] * d * d
    mean[0] = mu
    var[0] = acc


cdef bint normalize_log(double[::1] logw, double[::1] w, Py_ssize_t n) nogil:
    """exp-normalize log weights into w; True when reset to uniform."""
    cdef double m = -INFINITY, s = 0.0
    cdef Py_ssize_t i
    for i in range(n):
        if logw[i] > m:
            m = logw[i]
    if not (m > -INFINITY and m < INFINITY):
        for i in range(n):
            w[i] = 1.0 / n
        return True
    for i in range(n):
        w[i] = exp(logw[i] - m)
        s += w[i]
    if not (s > 0.0 and s < INFINITY):
        for i in range(n):
            w[i] = 1.0 / n
        return True
    for i in range(n):
        w[i] /= s
    return False


cdef void loglik(double[::1] theta, double[::1] omega, double[::1] eps, Py_ssize_t n,
                 double yr, double yi, double kf, double p0, double p1, double sigma2,
                 double[::1] out) nogil:
    cdef double lp0 = log(p0) if p0 > 0.0 else -INFINITY
    cdef double lp1 = log(p1) if p1 > 0.0 else -INFINITY
    cdef double phi, a
    cdef Py_ssize_t i
    for i in range(n):
        phi = theta[i] + omega[i] * kf + eps[i] * (kf * kf)
        a = 2.0 * (yr * cos(phi) + yi * sin(phi)) / sigma2
        out[i] = logaddexp(lp0 + a, lp1 - a)


cdef inline double regen_center(double c, double half, double bound) nogil:
    cdef double lim = bound - half
    if lim < 0.0:
        lim = 0.0
    if c < -lim:
        return -lim
    if c > lim:
        return lim
    return c


cdef bint solve3(double G[3][3], double b[3], double x[3]) nogil:
    """Gaussian elimination with partial pivoting on a 3x3 system."""
    cdef double A[3][4]
    cdef int i, j, r, p
    cdef double f, t
    for i in range(3):
        for j in range(3):
            A[i][j] = G[i][j]
        A[i][3] = b[i]
    for i in range(3):
        p = i
        for r in range(i + 1, 3):
            if abs(A[r][i]) > abs(A[p][i]):
                p = r
        if A[p][i] == 0.0:
            return False
        if p != i:
            for j in range(4):
                t = A[i][j]
                A[i][j] = A[p][j]
                A[p][j] = t
        for r in range(i + 1, 3):
            f = A[r][i] / A[i][i]
            for j in range(i, 4):
                A[r][j] -= f * A[i][j]
    for i in range(2, -1, -1):
        t = A[i][3]
        for j in range(i + 1, 3):
            t -= A[i][j] * x[j]
        x[i] = t / A[i][i]
    return True


cdef bint fit_history(double[::1] hist, Py_ssize_t n, double[::1] unwrapped,
                      double* th, double* om, double* ep) nogil:
    """Unwrap hist[0..n-1] and least-squares fit theta + omega k + eps k^2."""
    cdef Py_ssize_t i, j
    cdef double turns, c, s, t, y
    cdef double G[3][3]
    cdef double b[3]
    cdef double a[3]
    turns = 0.0
    unwrapped[0] = hist[0]
    for i in range(1, n):
        turns += ceil((hist[i] - hist[i - 1] - M_PI) / TWO_PI)
        unwrapped[i] = hist[i] - TWO_PI * turns
    c = (n - 1) / 2.0
    s = c if c > 1.0 else 1.0
    for i in range(3):
        b[i] = 0.0
        for j in range(3):
            G[i][j] = 0.0
    for i in range(n):
        t = (i - c) / s
        y = unwrapped[i]
        G[0][0] += 1.0
        G[0][1] += t
        G[0][2] += t * t
        G[1][2] += t * t * t
        G[2][2] += t * t * t * t
        b[0] += y
        b[1] += t * y
        b[2] += t * t * y
    G[1][0] = G[0][1]
    G[1][1] = G[0][2]
    G[2][0] = G[0][2]
    G[2][1] = G[1][2]
    if not solve3(G, b, a):
        return False
    ep[0] = a[2] / (s * s)
    om[0] = a[1] / s - 2.0 * a[2] * c / (s * s)
    th[0] = a[0] - a[1] * c / s + a[2] * c * c / (s * s)
    return True


def pf_filter(const double complex[::1] y, const double[:, ::1] incoming, double sigma2,
              int n_particles, double omega_max, double eps_max, int k_first,
              bint ft_enabled, double alpha, double zeta, double gamma,
              double theta_th, double omega_th, int ft_max_fires, double kappa_cap,
              bit_generator):
    cdef Py_ssize_t L = y.shape[0]
    cdef Py_ssize_t n = n_particles
    cdef Py_ssize_t i, k, j
    cdef bitgen_t* rng = <bitgen_t*> PyCapsule_GetPointer(bit_generator.capsule, "BitGenerator")

    th_arr = np.empty(n)
    om_arr = np.empty(n)
    ep_arr = np.empty(n)
    w_arr = np.empty(n)
    cdef double[::1] th = th_arr
    cdef double[::1] om = om_arr
    cdef double[::1] ep = ep_arr
    cdef double[::1] w = w_arr
    cdef double[::1] logw = np.empty(n)
    cdef double[::1] ll = np.empty(n)
    cdef double[::1] cum = np.empty(n)
    cdef double[::1] th2 = np.empty(n)
    cdef double[::1] om2 = np.empty(n)
    cdef double[::1] ep2 = np.empty(n)
    cdef double[::1] unwrapped = np.empty(L)

    th_hat_arr = np.empty(L)
    om_hat_arr = np.empty(L)
    ep_hat_arr = np.empty(L)
    phi_hat_arr = np.empty(L)
    cdef double[::1] th_hat = th_hat_arr
    cdef double[::1] om_hat = om_hat_arr
    cdef double[::1] ep_hat = ep_hat_arr
    cdef double[::1] phi_hat = phi_hat_arr

    cdef double mu, r, kappa, om_mean, om_var, ep_mean, ep_var
    cdef double uo, vo, ue, ve, kf, s, u0, point, var_t, var_o, d
    cdef double fth, fom, fep, th0, lo, hi, prev = 0.0, omg, epv, c
    cdef bint have_prev = False, clamped
    cdef int n_degenerate = 0, n_fallback = 0, n_clamped = 0, n_res = 0
    cdef int fires = 0
    fired = []

    with bit_generator.lock:
        for i in range(n):
            th[i] = random_uniform(rng, -M_PI, M_PI - (-M_PI))
        for i in range(n):
            om[i] = random_uniform(rng, -omega_max, omega_max - (-omega_max))
        for i in range(n):
            ep[i] = random_uniform(rng, -eps_max, eps_max - (-eps_max))
        for i in range(n):
            w[i] = 1.0 / n

        for k in range(L):
            kf = <double> k
            # proposal statistics from the previous weighted cloud
            circular_mean(th, w, n, &mu, &r)
            kappa = kappa_from_resultant(r, kappa_cap)
            weighted_moments(om, w, n, omega_max, &om_mean, &om_var)
            weighted_moments(ep, w, n, eps_max, &ep_mean, &ep_var)
            clamped = beta_shape(om_mean, om_var, &uo, &vo)
            if beta_shape(ep_mean, ep_var, &ue, &ve):
                clamped = True
            n_clamped += clamped
            # draw: all theta, then all omega, then all epsilon
            for i in range(n):
                th[i] = random_vonmises(rng, mu, kappa)
            for i in range(n):
                om[i] = 2.0 * omega_max * random_beta(rng, uo, vo) - omega_max
            for i in range(n):
                ep[i] = 2.0 * eps_max * random_beta(rng, ue, ve) - eps_max
            # weight recursion
            loglik(th, om, ep, n, y[k].real, y[k].imag, kf, incoming[k, 0], incoming[k, 1], sigma2, ll)
            for i in range(n):
                logw[i] = (log(w[i]) if w[i] > 0.0 else -INFINITY) + ll[i]
            n_degenerate += normalize_log(logw, w, n)
            # resampling
            s = 0.0
            for i in range(n):
                s += w[i] * w[i]
            if 1.0 / s <= n / 2.0:
                c = 0.0
                for i in range(n):
                    c += w[i]
                    cum[i] = c
                u0 = random_standard_uniform(rng)
                j = 0
                for i in range(n):
                    point = (u0 + i) / n
                    while j < n - 1 and cum[j] <= point:
                        j += 1
                    th2[i] = th[j]
                    om2[i] = om[j]
                    ep2[i] = ep[j]
                for i in range(n):
                    th[i] = th2[i]
                    om[i] = om2[i]
                    ep[i] = ep2[i]
                    w[i] = 1.0 / n
                n_res += 1
            # fine-tuning
            if ft_enabled and fires < ft_max_fires and k >= k_first:
                circular_mean(th, w, n, &mu, &r)
                var_t = 0.0
                for i in range(n):
                    d = wrap(th[i] - mu)
                    var_t += w[i] * d * d
                weighted_moments(om, w, n, omega_max, &om_mean, &var_o)
                if var_t < theta_th and var_o < omega_th and k >= 3:
                    if fit_history(phi_hat, k, unwrapped, &fth, &fom, &fep):
                        th0 = wrap(fth)
                        lo = th0 - alpha
                        hi = th0 + alpha
                        for i in range(n):
                            th[i] = wrap(random_uniform(rng, lo, hi - lo))
                        fom = regen_center(fom, zeta, omega_max)
                        lo = fom - zeta
                        hi = fom + zeta
                        for i in range(n):
                            omg = random_uniform(rng, lo, hi - lo)
                            om[i] = -omega_max if omg < -omega_max else (omega_max if omg > omega_max else omg)
                        fep = regen_center(fep, gamma, eps_max)
                        lo = fep - gamma
                        hi = fep + gamma
                        for i in range(n):
                            epv = random_uniform(rng, lo, hi - lo)
                            ep[i] = -eps_max if epv < -eps_max else (eps_max if epv > eps_max else epv)
                        # fresh draws of static parameters: weight by every symbol so far
                        for i in range(n):
                            logw[i] = 0.0
                        for j in range(k + 1):
                            loglik(th, om, ep, n, y[j].real, y[j].imag, <double> j,
                                   incoming[j, 0], incoming[j, 1], sigma2, ll)
                            for i in range(n):
                                logw[i] += ll[i]
                        normalize_log(logw, w, n)
                        fires += 1
                        fired.append(k)
            # estimates
            circular_mean(th, w, n, &mu, &r)
            if r < RESULTANT_MIN:
                n_fallback += 1
                mu = prev if have_prev else 0.0
            om_mean = 0.0
            ep_mean = 0.0
            for i in range(n):
                om_mean += w[i] * om[i]
                ep_mean += w[i] * ep[i]
            th_hat[k] = mu
            om_hat[k] = om_mean
            ep_hat[k] = ep_mean
            phi_hat[k] = mu + om_mean * kf + ep_mean * kf * kf
            prev = mu
            have_prev = True

    flags = {"degenerate": n_degenerate, "theta_fallback": n_fallback, "beta_clamped": n_clamped}
    return (th_hat_arr, om_hat_arr, ep_hat_arr, phi_hat_arr, fired, n_res, flags,
            (th_arr, om_arr, ep_arr, w_arr))

"""Sequential minimal optimisation for the box- and equality-constrained QP

    min_a  0.5 a'Qa - p'a   s.t.  0 <= a_i <= C_i,  sum_i y_i a_i = 0,

with ``Q_ij = y_i y_j K_ij``.  Working-set selection uses second-order
information (Fan, Chen & Lin, 2005), the update and clipping follow LIBSVM.
"""

import numpy as np
from numba import njit

TAU = 1e-12


@njit(cache=True)
def _rho(alpha, G, y, C):
    ub = np.inf
    lb = -np.inf
    nfree = 0
    sfree = 0.0
    for i in range(alpha.shape[0]):
        yG = y[i] * G[i]
        if alpha[i] >= C[i]:
            if y[i] < 0:
                ub = min(ub, yG)
            else:
                lb = max(lb, yG)
        elif alpha[i] <= 0.0:
            if y[i] > 0:
                ub = min(ub, yG)
            else:
                lb = max(lb, yG)
        else:
            nfree += 1
            sfree += yG
    if nfree > 0:
        return sfree / nfree
    if not np.isfinite(ub):
        return lb
    if not np.isfinite(lb):
        return ub
    return 0.5 * (ub + lb)


@njit(cache=True)
def _objectives(alpha, G, y, C, p):
    """(scaled primal, dual, rho) at the current iterate."""
    rho = _rho(alpha, G, y, C)
    quad = 0.0
    lin = 0.0
    loss = 0.0
    for i in range(alpha.shape[0]):
        quad += alpha[i] * (G[i] + p[i])
        lin += alpha[i] * p[i]
        # y_i f_i = G_i + p_i - y_i rho
        slack = p[i] - (G[i] + p[i] - y[i] * rho)
        if slack > 0:
            loss += C[i] * slack
    primal = 0.5 * quad + loss
    dual = lin - 0.5 * quad
    return primal, dual, rho


@njit(cache=True)
def smo_solve(K, y, C, p, tol, max_passes):
    n = y.shape[0]
    alpha = np.zeros(n)
    G = -p.copy()
    QD = np.empty(n)
    for i in range(n):
        QD[i] = K[i, i]
    pass_len = max(n, 1)
    max_iter = max_passes * pass_len
    n_pass = max_passes + 1
    primal_hist = np.empty(n_pass)
    dual_hist = np.empty(n_pass)
    best_alpha = alpha.copy()
    best_G = G.copy()
    best_primal, d0, r0 = _objectives(alpha, G, y, C, p)
    primal_hist[0] = best_primal
    dual_hist[0] = d0
    n_rec = 1
    it = 0
    converged = False
    gap = np.inf
    while it < max_iter:
        # select i: maximal violator in I_up
        gmax = -np.inf
        i = -1
        for t in range(n):
            if y[t] > 0:
                if alpha[t] < C[t] and -G[t] >= gmax:
                    gmax = -G[t]
                    i = t
            else:
                if alpha[t] > 0 and G[t] >= gmax:
                    gmax = G[t]
                    i = t
        gmax2 = -np.inf
        j = -1
        obj_min = np.inf
        for t in range(n):
            if y[t] > 0:
                if alpha[t] > 0:
                    if G[t] >= gmax2:
                        gmax2 = G[t]
                    if i >= 0:
                        gd = gmax + G[t]
                        if gd > 0:
                            qc = QD[i] + QD[t] - 2.0 * y[i] * K[i, t]
                            if qc <= 0:
                                qc = TAU
                            od = -(gd * gd) / qc
                            if od <= obj_min:
                                j = t
                                obj_min = od
            else:
                if alpha[t] < C[t]:
                    if -G[t] >= gmax2:
                        gmax2 = -G[t]
                    if i >= 0:
                        gd = gmax - G[t]
                        if gd > 0:
                            qc = QD[i] + QD[t] + 2.0 * y[i] * K[i, t]
                            if qc <= 0:
                                qc = TAU
                            od = -(gd * gd) / qc
                            if od <= obj_min:
                                j = t
                                obj_min = od
        gap = gmax + gmax2
        if gap < tol or j == -1 or i == -1:
            converged = True
            break
        Ci = C[i]
        Cj = C[j]
        ai_old = alpha[i]
        aj_old = alpha[j]
        Qij = y[i] * y[j] * K[i, j]
        if y[i] != y[j]:
            qc = QD[i] + QD[j] + 2.0 * Qij
            if qc <= 0:
                qc = TAU
            delta = (-G[i] - G[j]) / qc
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > Ci - Cj:
                if alpha[i] > Ci:
                    alpha[i] = Ci
                    alpha[j] = Ci - diff
            else:
                if alpha[j] > Cj:
                    alpha[j] = Cj
                    alpha[i] = Cj + diff
        else:
            qc = QD[i] + QD[j] - 2.0 * Qij
            if qc <= 0:
                qc = TAU
            delta = (G[i] - G[j]) / qc
            s = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if s > Ci:
                if alpha[i] > Ci:
                    alpha[i] = Ci
                    alpha[j] = s - Ci
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = s
            if s > Cj:
                if alpha[j] > Cj:
                    alpha[j] = Cj
                    alpha[i] = s - Cj
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = s
        dai = alpha[i] - ai_old
        daj = alpha[j] - aj_old
        yi_dai = y[i] * dai
        yj_daj = y[j] * daj
        for t in range(n):
            G[t] += y[t] * (K[t, i] * yi_dai + K[t, j] * yj_daj)
        it += 1
        if it % pass_len == 0:
            pr, du, rr = _objectives(alpha, G, y, C, p)
            primal_hist[n_rec] = pr
            dual_hist[n_rec] = du
            n_rec += 1
            if pr < best_primal:
                best_primal = pr
                best_alpha[:] = alpha
                best_G[:] = G
    pr, du, rr = _objectives(alpha, G, y, C, p)
    if converged or pr <= best_primal:
        best_alpha[:] = alpha
        best_G[:] = G
    return best_alpha, best_G, it, converged, gap, primal_hist[:n_rec], dual_hist[:n_rec]

"""Pure NumPy curvature kernels (the fallback backend).

Index layout over a batch of m points in dimension n:
  g, ginv      (m, n, n)
  dg           (m, n, n, n)       dg[:, k, i, j] = d_k g_ij
  d2g          (m, n, n, n, n)    d2g[:, k, l, i, j] = d_k d_l g_ij
The flat reference has vanishing connection and curvature on the exterior
chart, so covariant derivatives are plain partials throughout.
"""

from __future__ import annotations

import numpy as np


def first_order(g: np.ndarray, ginv: np.ndarray, dg: np.ndarray):
    """First-derivative curvature algebra.

    Returns ``(f, df, gamma, v, w, qs)`` where
      f      = g^-1 - I
      df     d_k f^ij from the exact identity d_k g^ij = -g^ip g^jq d_k g_pq
      gamma  difference tensor components Gamma^k_ij
      v      the g-contracted mass vector (g^ij g^kl - g^ik g^jl) d_k e_jl
      w      the flat-contracted mass vector d_j e_ij - d_i tr(e)
      qs     the non-divergence part of the scalar curvature decomposition
    """
    f = ginv - np.eye(g.shape[1])
    df = -np.einsum("mip,mjq,mkpq->mkij", ginv, ginv, dg)

    # s[m, i, j, l] = d_i g_jl + d_j g_il - d_l g_ij
    s = dg + np.einsum("mjil->mijl", dg) - np.einsum("mlij->mijl", dg)
    gamma = 0.5 * np.einsum("mkl,mijl->mkij", ginv, s)

    w = np.einsum("mjij->mi", dg) - np.einsum("mijj->mi", dg)
    v = (np.einsum("mij,mkl,mkjl->mi", ginv, ginv, dg)
         - np.einsum("mik,mjl,mkjl->mi", ginv, ginv, dg))

    gt = np.einsum("mvvu->mu", gamma)  # Gamma^v_{vu}
    qs = (np.einsum("mij,muij,mu->m", ginv, gamma, gt)
          - np.einsum("mij,muvi,mvju->m", ginv, gamma, gamma)
          - np.einsum("mvij,mvij->m", df, gamma)
          + np.einsum("miij,mj->m", df, gt))
    return f, df, gamma, v, w, qs


def second_order(g: np.ndarray, ginv: np.ndarray, dg: np.ndarray, d2g: np.ndarray):
    """Second-derivative curvature algebra.

    Returns ``(ric_lead, qric, scal, divv)``:
      ric_lead  the leading second-derivative block of the Ricci tensor
      qric      the quadratic remainder, so Ric = ric_lead + qric
      scal      g^ij Ric_ij
      divv      the flat divergence of the mass vector v, in closed form
    """
    f, df, gamma, v, w, qs = first_order(g, ginv, dg)

    ric_lead = 0.5 * (np.einsum("mkl,mkilj->mij", ginv, d2g)
                      + np.einsum("mkl,mkjli->mij", ginv, d2g)
                      - np.einsum("mkl,mklij->mij", ginv, d2g)
                      - np.einsum("mkl,mijkl->mij", ginv, d2g))

    gt = np.einsum("mvvu->mu", gamma)
    dfc = np.einsum("muul->ml", df)  # d_u g^{ul}
    t3 = (np.einsum("ml,milj->mij", dfc, dg)
          + np.einsum("ml,mjli->mij", dfc, dg)
          - np.einsum("ml,mlij->mij", dfc, dg))
    t4 = (np.einsum("miul,mulj->mij", df, dg)
          + np.einsum("miul,mjlu->mij", df, dg)
          - np.einsum("miul,mluj->mij", df, dg))
    qric = (np.einsum("muij,mu->mij", gamma, gt)
            - np.einsum("muiv,mvju->mij", gamma, gamma)
            + 0.5 * t3 - 0.5 * t4)

    ric = ric_lead + qric
    scal = np.einsum("mij,mij->m", ginv, ric)

    divv = (np.einsum("miij,mkl,mkjl->m", df, ginv, dg)
            + np.einsum("mij,mikl,mkjl->m", ginv, df, dg)
            - np.einsum("miik,mjl,mkjl->m", df, ginv, dg)
            - np.einsum("mik,mijl,mkjl->m", ginv, df, dg)
            + np.einsum("mij,mkl,mikjl->m", ginv, ginv, d2g)
            - np.einsum("mik,mjl,mikjl->m", ginv, ginv, d2g))
    return ric_lead, qric, scal, divv

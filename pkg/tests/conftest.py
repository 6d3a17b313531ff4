"""Shared walks and caches; the expensive ones are session-scoped."""

import pytest

import walkops as w

LAZY_Z = "(0) 1/2\n(1) 1/4\n(-1) 1/4"
SRW_Z = "(1) 1/2\n(-1) 1/2"
LAZY_Z2 = "(0,0) 1/2\n(1,0) 1/8\n(-1,0) 1/8\n(0,1) 1/8\n(0,-1) 1/8"
ISO_F2 = "e 1/5\na 1/5\nA 1/5\nb 1/5\nB 1/5"
SRW_F2 = "a 1/4\nA 1/4\nb 1/4\nB 1/4"
LAMP_Z = "(0,{}) 1/4\n(1,{}) 1/4\n(-1,{}) 1/4\n(0,{0}) 1/4"


@pytest.fixture(scope="session")
def lattice1():
    return w.LatticeGroup(1)


@pytest.fixture(scope="session")
def lattice2():
    return w.LatticeGroup(2)


@pytest.fixture(scope="session")
def free2():
    return w.FreeGroup(2)


@pytest.fixture(scope="session")
def lamp1():
    return w.LamplighterGroup(1)


@pytest.fixture(scope="session")
def lazy_z(lattice1):
    return w.parse_measure(LAZY_Z, lattice1)


@pytest.fixture(scope="session")
def lazy_z2(lattice2):
    return w.parse_measure(LAZY_Z2, lattice2)


@pytest.fixture(scope="session")
def iso_f2(free2):
    return w.parse_measure(ISO_F2, free2)


@pytest.fixture(scope="session")
def lamp_mu(lamp1):
    return w.parse_measure(LAMP_Z, lamp1)


@pytest.fixture(scope="session")
def lazy_z_cache(lattice1, lazy_z):
    return w.convolution_powers(lattice1, lazy_z, 256)


@pytest.fixture(scope="session")
def lazy_z2_cache(lattice2, lazy_z2):
    return w.convolution_powers(lattice2, lazy_z2, 256)


@pytest.fixture(scope="session")
def f2_cache(free2, iso_f2):
    return w.convolution_powers(free2, iso_f2, 2000)


@pytest.fixture(scope="session")
def f2_spectral(f2_cache):
    return w.spectral_radius(f2_cache)


@pytest.fixture(scope="session")
def f2_table(f2_cache, f2_spectral):
    return w.KernelTable(f2_cache, rho_hat=f2_spectral.rho_hat)


@pytest.fixture(scope="session")
def lazy_z_spectral(lazy_z_cache):
    return w.spectral_radius(lazy_z_cache)


@pytest.fixture(scope="session")
def lazy_z_table(lazy_z_cache, lazy_z_spectral):
    return w.KernelTable(lazy_z_cache, rho_hat=lazy_z_spectral.rho_hat)


@pytest.fixture(scope="session")
def lazy_z2_spectral(lazy_z2_cache):
    return w.spectral_radius(lazy_z2_cache)


@pytest.fixture(scope="session")
def lazy_z2_table(lazy_z2_cache, lazy_z2_spectral):
    return w.KernelTable(lazy_z2_cache, rho_hat=lazy_z2_spectral.rho_hat)


CARTESIAN_F2Z = (
    "(e|(0)) 0.35\n"
    "(a|(0)) 0.1\n(A|(0)) 0.1\n(b|(0)) 0.1\n(B|(0)) 0.1\n"
    "(e|(1)) 0.125\n(e|(-1)) 0.125"
)


@pytest.fixture(scope="session")
def product_f2z():
    return w.ProductGroup(w.FreeGroup(2), w.LatticeGroup(1))


@pytest.fixture(scope="session")
def cartesian_mu(product_f2z):
    return w.parse_measure(CARTESIAN_F2Z, product_f2z)


@pytest.fixture(scope="session")
def cartesian_cache(product_f2z, cartesian_mu):
    f2 = product_f2z.left
    track = [(word, (v,)) for word in f2.ball(4) for v in range(-4, 5)]
    return w.convolution_powers(
        product_f2z, cartesian_mu, 500, track=track, memory_budget_mb=64
    )

# =============================
# Imports
# =============================
import pandas as pd
import streamlit as st

from config.settings import load_settings
from src.bench import CRITERIA, run_bench
from src.errors import RectifyError
from src.evaluation import kappa_sweep
from src.model import NoiseModel, generate_instance, generate_weights, get_activation
from src.numerics import rank, svd
from src.utils import SeedStream, setup_logging

# =============================
# Page Config (must be before any Streamlit output)
# =============================
st.set_page_config(
    page_title="Rectify Bench",
    layout="wide",
    initial_sidebar_state="expanded",
)

if "initialized" not in st.session_state:
    st.session_state.initialized = True
    st.session_state.bench_table = None


@st.cache_resource
def init_components():
    settings = load_settings()
    setup_logging(settings)
    return settings


settings = init_components()

st.title("Two-layer ReLU network recovery")

# =============================
# Sidebar Controls
# =============================
st.sidebar.title("Controls")
seed = int(st.sidebar.number_input("Seed", min_value=0, value=0, step=1))
threads = st.sidebar.slider("Threads", 1, 16, int(settings['performance']['threads']))
smoke = st.sidebar.toggle("Smoke sizes", value=True)
criteria = st.sidebar.multiselect("Criteria", list(CRITERIA), default=list(settings['bench']['selftest_criteria']))

tab_bench, tab_instance, tab_kappa = st.tabs(["Bench", "Instance", "Kappa separation"])

# =============================
# Bench
# =============================
with tab_bench:
    for name in criteria:
        st.caption(f"{name}: {CRITERIA[name].description}")
    if st.button("Run selected criteria", disabled=not criteria):
        with st.spinner("Running trials..."):
            st.session_state.bench_table = run_bench(criteria, SeedStream(seed), settings,
                                                     threads=threads, smoke=smoke)
    table = st.session_state.bench_table
    if table is not None:
        passed = int(table['passed'].sum())
        c1, c2 = st.columns(2)
        c1.metric("Criteria passed", f"{passed}/{len(table)}")
        c2.metric("Total seconds", f"{table['seconds'].sum():.1f}")
        st.dataframe(table, use_container_width=True, hide_index=True)

# =============================
# Instance singular values
# =============================
with tab_instance:
    c1, c2, c3, c4 = st.columns(4)
    m = c1.number_input("m", 1, 200, int(settings['model']['m']))
    k = c2.number_input("k", 1, 20, int(settings['model']['k']))
    d = c3.number_input("d", 1, 200, int(settings['model']['d']))
    n = c4.number_input("n", 1, 200_000, 2000)
    activation = st.selectbox("Activation", ['relu', 'power:2', 'power:3', 'expm1'])
    noise = st.text_input("Noise", value='none')
    kappa = st.slider("Target kappa(V)", 1.0, 20.0, 1.0)
    if st.button("Generate"):
        try:
            stream = SeedStream(seed)
            w = generate_weights(int(m), int(k), int(d), kappa, stream.child('weights'))
            inst = generate_instance(w, get_activation(activation), int(n), NoiseModel.parse(noise),
                                     stream.child('instance'))
            spectra = {name: pd.Series(svd(mat).singular_values)
                       for name, mat in (('A', inst.a), ('V', w.v), ('U', w.u))}
            st.dataframe(pd.DataFrame(spectra).rename_axis('index'), use_container_width=True)
            st.write(f"rank(A) = {rank(inst.a)}, kappa(V) = {w.kappa_v():.3g}")
        except RectifyError as e:
            st.error(f"{type(e).__name__}: {e}")

# =============================
# Kappa separation
# =============================
with tab_kappa:
    seeds = st.slider("Seeds per a", 1, 50, 10)
    sample_n = st.number_input("Columns", 100, 100_000, 10_000)
    if st.button("Sweep"):
        summary = kappa_sweep((0.001, 0.01, 0.1, 1.0), int(sample_n), seeds, SeedStream(seed).child('kappa'))
        st.metric("Monotone in a", "yes" if summary.monotone else "no")
        st.dataframe(pd.DataFrame({'a': summary.a_values, 'mean differing fraction': summary.means,
                                   'identical share': [summary.identical_share[a] for a in summary.a_values]}),
                     use_container_width=True, hide_index=True)

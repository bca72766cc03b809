#pragma once

#include "attamba/chunking.hpp"
#include "attamba/ops.hpp"
#include "attamba/tensor.hpp"

namespace attamba {

// Selective diagonal state-space block used in place of the key/value
// projections. Per channel e with state width s:
//   delta_t[e] = softplus(x_t[e] * w_dt[e] + b_dt[e])
//   h_t[e,s]   = exp(delta_t[e] * A[e,s]) * h_{t-1}[e,s] + delta_t[e] * B_t[s] * x_t[e]
//   y_t[e]     = <C_t, h_t[e,:]> + d_skip[e] * x_t[e] + x_t[e]
// with A = -exp(a_log) and B_t, C_t input projections shared across channels.
template <typename T>
struct SSMParams {
    int model_dim = 0;
    int state_dim = 0;
    Tensor<T> a_log;   // [e, s]
    Tensor<T> w_b;     // [e, s]
    Tensor<T> w_c;     // [e, s]
    Tensor<T> w_dt;    // [e]
    Tensor<T> b_dt;    // [e]
    Tensor<T> d_skip;  // [e]

    std::vector<Tensor<T>*> tensors() {
        return {&a_log, &w_b, &w_c, &w_dt, &b_dt, &d_skip};
    }
};

inline std::size_t ssm_param_count(int model_dim, int state_dim) {
    return 3u * static_cast<std::size_t>(model_dim) * state_dim + 3u * model_dim;
}

template <typename T>
SSMParams<T> init_ssm(int model_dim, int state_dim, Rng& rng) {
    if (model_dim < 1 || state_dim < 1)
        throw ConfigError("init_ssm: dimensions must be positive");
    SSMParams<T> p;
    p.model_dim = model_dim;
    p.state_dim = state_dim;
    p.a_log = Tensor<T>::zeros({model_dim, state_dim}, true);
    p.w_b = Tensor<T>::zeros({model_dim, state_dim}, true);
    p.w_c = Tensor<T>::zeros({model_dim, state_dim}, true);
    p.w_dt = Tensor<T>::zeros({model_dim}, true);
    p.b_dt = Tensor<T>::zeros({model_dim}, true);
    p.d_skip = Tensor<T>::full({model_dim}, T(1), true);
    // Decay rates start evenly spread over [1, state_dim] per channel; the
    // step-size bias puts softplus near 0.1 so early updates stay small.
    for (int e = 0; e < model_dim; ++e)
        for (int s = 0; s < state_dim; ++s)
            p.a_log.at(static_cast<std::size_t>(e) * state_dim + s) =
                std::log(T(1) + static_cast<T>(s));
    T dt_bias = static_cast<T>(std::log(std::expm1(0.1)));
    for (int e = 0; e < model_dim; ++e) {
        p.w_dt.at(e) = static_cast<T>(rng.trunc_normal(0.02));
        p.b_dt.at(e) = dt_bias;
    }
    for (std::size_t i = 0; i < p.w_b.numel(); ++i) {
        p.w_b.at(i) = static_cast<T>(rng.trunc_normal(0.02));
        p.w_c.at(i) = static_cast<T>(rng.trunc_normal(0.02));
    }
    return p;
}

// Running hidden state for incremental token processing.
template <typename T>
struct SSMState {
    std::vector<T> h;  // model_dim * state_dim
    int position_in_chunk = 0;
};

namespace detail {

// Advance the recurrence by one token. Both the batched scan and the decode
// step call this, so their arithmetic matches bit for bit. Optionally records
// delta and the shared B/C projections for the backward pass.
template <typename T>
inline void ssm_token_forward(int e_dim, int s_dim, const T* a_log, const T* w_b,
                              const T* w_c, const T* w_dt, const T* b_dt, const T* d_skip,
                              const T* x, bool reset, T* h, T* y, T* b_tmp, T* c_tmp,
                              T* delta_save) {
    if (reset) std::fill(h, h + static_cast<std::size_t>(e_dim) * s_dim, T(0));
    std::fill(b_tmp, b_tmp + s_dim, T(0));
    std::fill(c_tmp, c_tmp + s_dim, T(0));
    for (int e = 0; e < e_dim; ++e) {
        T xe = x[e];
        const T* wbr = w_b + static_cast<std::size_t>(e) * s_dim;
        const T* wcr = w_c + static_cast<std::size_t>(e) * s_dim;
        for (int s = 0; s < s_dim; ++s) {
            b_tmp[s] += xe * wbr[s];
            c_tmp[s] += xe * wcr[s];
        }
    }
    for (int e = 0; e < e_dim; ++e) {
        T xe = x[e];
        T delta = softplus_scalar(xe * w_dt[e] + b_dt[e]);
        if (delta_save) delta_save[e] = delta;
        const T* alr = a_log + static_cast<std::size_t>(e) * s_dim;
        T* hr = h + static_cast<std::size_t>(e) * s_dim;
        T acc = T(0);
        for (int s = 0; s < s_dim; ++s) {
            T a = -std::exp(alr[s]);
            hr[s] = std::exp(delta * a) * hr[s] + delta * b_tmp[s] * xe;
            acc += c_tmp[s] * hr[s];
        }
        y[e] = acc + d_skip[e] * xe + xe;
    }
}

}  // namespace detail

inline std::vector<uint8_t> resets_from_plan(const ChunkPlan& plan, int layer) {
    std::vector<uint8_t> resets(plan.n, 0);
    if (plan.n > 0) resets[0] = 1;
    for (int b : plan.layer_boundaries(layer))
        if (b + 1 < plan.n) resets[b + 1] = 1;
    return resets;
}

// Final hidden state captured for the inference cache.
template <typename T>
struct ScanCapture {
    SSMState<T> state;
};

// Full-sequence recurrence with segment resets. Differentiable with respect
// to the input and every parameter; the backward pass runs the adjoint
// recurrence in reverse time and is O(n * e * s) like the forward.
template <typename T>
Tensor<T> ssm_scan(const SSMParams<T>& params, const Tensor<T>& x,
                   const std::vector<uint8_t>& resets, ScanCapture<T>* capture = nullptr,
                   FlopCounter* counter = nullptr) {
    if (x.rank() != 2) throw ShapeError("ssm_scan: input must be [n,e]");
    int n = x.dim(0), e_dim = x.dim(1), s_dim = params.state_dim;
    if (e_dim != params.model_dim) throw ShapeError("ssm_scan: channel count mismatch");
    if (static_cast<int>(resets.size()) != n)
        throw ContractError("ssm_scan: resets length must match sequence length");
    if (n > 0 && !resets[0])
        throw ContractError("ssm_scan: first position must start a segment");

    Tensor<T> out = Tensor<T>::zeros({n, e_dim});
    const std::size_t es = static_cast<std::size_t>(e_dim) * s_dim;
    auto h_hist = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n) * es);
    auto delta_hist = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n) * e_dim);
    auto b_hist = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n) * s_dim);
    auto c_hist = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n) * s_dim);

    std::vector<T> h(es, T(0));
    int pos_in_chunk = 0;
    for (int t = 0; t < n; ++t) {
        detail::ssm_token_forward(e_dim, s_dim, params.a_log.ptr(), params.w_b.ptr(),
                                  params.w_c.ptr(), params.w_dt.ptr(), params.b_dt.ptr(),
                                  params.d_skip.ptr(),
                                  x.ptr() + static_cast<std::size_t>(t) * e_dim,
                                  resets[t] != 0, h.data(),
                                  out.ptr() + static_cast<std::size_t>(t) * e_dim,
                                  b_hist->data() + static_cast<std::size_t>(t) * s_dim,
                                  c_hist->data() + static_cast<std::size_t>(t) * s_dim,
                                  delta_hist->data() + static_cast<std::size_t>(t) * e_dim);
        std::copy(h.begin(), h.end(), h_hist->data() + static_cast<std::size_t>(t) * es);
        pos_in_chunk = resets[t] ? 1 : pos_in_chunk + 1;
    }
    if (counter) counter->ssm_macs += 1LL * n * e_dim * s_dim * 5;
    check_finite(out, "ssm_scan");
    if (capture) {
        capture->state.h = h;
        capture->state.position_in_chunk = pos_in_chunk;
    }

    Tensor<T> a_log = params.a_log, w_b = params.w_b, w_c = params.w_c;
    Tensor<T> w_dt = params.w_dt, b_dt = params.b_dt, d_skip = params.d_skip;
    auto resets_copy = std::make_shared<std::vector<uint8_t>>(resets);
    attach_node(out, {x, a_log, w_b, w_c, w_dt, b_dt, d_skip},
                [h_hist, delta_hist, b_hist, c_hist, resets_copy, n, e_dim,
                 s_dim](const Tensor<T>& o) {
        auto& nd = *o.node;
        const std::size_t es = static_cast<std::size_t>(e_dim) * s_dim;
        const T* G = o.grad->data();
        const T* X = nd.parents[0].data->data();
        const T* AL = nd.parents[1].data->data();
        const T* WB = nd.parents[2].data->data();
        const T* WC = nd.parents[3].data->data();
        const T* WDT = nd.parents[4].data->data();
        const T* DS = nd.parents[6].data->data();
        T* dX = nd.parents[0].requires_grad ? nd.parents[0].grad->data() : nullptr;
        T* dAL = nd.parents[1].requires_grad ? nd.parents[1].grad->data() : nullptr;
        T* dWB = nd.parents[2].requires_grad ? nd.parents[2].grad->data() : nullptr;
        T* dWC = nd.parents[3].requires_grad ? nd.parents[3].grad->data() : nullptr;
        T* dWDT = nd.parents[4].requires_grad ? nd.parents[4].grad->data() : nullptr;
        T* dBDT = nd.parents[5].requires_grad ? nd.parents[5].grad->data() : nullptr;
        T* dDS = nd.parents[6].requires_grad ? nd.parents[6].grad->data() : nullptr;

        std::vector<T> dh(es, T(0));       // d loss / d h_t, accumulated backward
        std::vector<T> db(s_dim), dc(s_dim);
        const T* H = h_hist->data();
        for (int t = n - 1; t >= 0; --t) {
            const T* xr = X + static_cast<std::size_t>(t) * e_dim;
            const T* gr = G + static_cast<std::size_t>(t) * e_dim;
            const T* ht = H + static_cast<std::size_t>(t) * es;
            const T* hprev =
                (*resets_copy)[t] ? nullptr : H + static_cast<std::size_t>(t - 1) * es;
            const T* bt = b_hist->data() + static_cast<std::size_t>(t) * s_dim;
            const T* ct = c_hist->data() + static_cast<std::size_t>(t) * s_dim;
            const T* dt = delta_hist->data() + static_cast<std::size_t>(t) * e_dim;
            std::fill(db.begin(), db.end(), T(0));
            std::fill(dc.begin(), dc.end(), T(0));
            for (int e = 0; e < e_dim; ++e) {
                T xe = xr[e];
                T ge = gr[e];
                T delta = dt[e];
                const T* alr = AL + static_cast<std::size_t>(e) * s_dim;
                const T* hr = ht + static_cast<std::size_t>(e) * s_dim;
                const T* hpr = hprev ? hprev + static_cast<std::size_t>(e) * s_dim : nullptr;
                T* dhr = dh.data() + static_cast<std::size_t>(e) * s_dim;
                T ddelta = T(0);
                T dxe = T(0);
                for (int s = 0; s < s_dim; ++s) {
                    T dhv = dhr[s] + ge * ct[s];
                    dc[s] += ge * hr[s];
                    T a = -std::exp(alr[s]);
                    T decay = std::exp(delta * a);
                    T hp = hpr ? hpr[s] : T(0);
                    T dg = dhv * hp;  // d loss / d decay
                    if (dAL)
                        dAL[static_cast<std::size_t>(e) * s_dim + s] +=
                            dg * decay * delta * a;
                    ddelta += dg * decay * a + dhv * bt[s] * xe;
                    db[s] += dhv * delta * xe;
                    dxe += dhv * delta * bt[s];
                    dhr[s] = hpr ? dhv * decay : T(0);  // flows to h_{t-1}
                }
                // delta = softplus(z): sigmoid(z) recovered as 1 - exp(-delta)
                T dz = ddelta * (T(1) - std::exp(-delta));
                if (dWDT) dWDT[e] += dz * xe;
                if (dBDT) dBDT[e] += dz;
                dxe += dz * WDT[e];
                dxe += ge * (DS[e] + T(1));
                if (dDS) dDS[e] += ge * xe;
                if (dX) dX[static_cast<std::size_t>(t) * e_dim + e] += dxe;
            }
            for (int e = 0; e < e_dim; ++e) {
                T xe = xr[e];
                const T* wbr = WB + static_cast<std::size_t>(e) * s_dim;
                const T* wcr = WC + static_cast<std::size_t>(e) * s_dim;
                T dxe = T(0);
                for (int s = 0; s < s_dim; ++s) {
                    if (dWB) dWB[static_cast<std::size_t>(e) * s_dim + s] += xe * db[s];
                    if (dWC) dWC[static_cast<std::size_t>(e) * s_dim + s] += xe * dc[s];
                    dxe += db[s] * wbr[s] + dc[s] * wcr[s];
                }
                if (dX) dX[static_cast<std::size_t>(t) * e_dim + e] += dxe;
            }
        }
    });
    return out;
}

// One-token advance against a running state. Not differentiable; inference
// only. Matches ssm_scan exactly at every position.
template <typename T>
void ssm_step(const SSMParams<T>& params, SSMState<T>& state, const T* x, bool reset,
              T* y, FlopCounter* counter = nullptr) {
    int e_dim = params.model_dim, s_dim = params.state_dim;
    if (state.h.empty()) state.h.assign(static_cast<std::size_t>(e_dim) * s_dim, T(0));
    if (state.h.size() != static_cast<std::size_t>(e_dim) * s_dim)
        throw ShapeError("ssm_step: state size mismatch");
    std::vector<T> b_tmp(s_dim), c_tmp(s_dim);
    detail::ssm_token_forward(e_dim, s_dim, params.a_log.ptr(), params.w_b.ptr(),
                              params.w_c.ptr(), params.w_dt.ptr(), params.b_dt.ptr(),
                              params.d_skip.ptr(), x, reset, state.h.data(), y,
                              b_tmp.data(), c_tmp.data(), static_cast<T*>(nullptr));
    state.position_in_chunk = reset ? 1 : state.position_in_chunk + 1;
    if (counter) counter->ssm_macs += 1LL * e_dim * s_dim * 5;
}

}  // namespace attamba
